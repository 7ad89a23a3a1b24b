"""Sequence replay: fixed-length episode chunks in a thread-safe ring buffer."""

import logging
import threading
from dataclasses import dataclass

import numpy as np

from .network import MemoryState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransitionSequence:
    """L padded steps of one episode plus the observation that follows them.

    `obs`, `prev_actions` and `prev_rewards` have L + 1 entries: entry t is the
    network input at step t, entry L the bootstrap input. `mask[t]` is 1 for
    real steps and 0 for padding. `memory` is the actor's recurrent state at
    the first step.
    """

    obs: np.ndarray
    prev_actions: np.ndarray
    prev_rewards: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    mask: np.ndarray
    memory: MemoryState

    def __post_init__(self):
        length = len(self.actions)
        for name in ("rewards", "dones", "mask"):
            if len(getattr(self, name)) != length:
                raise ValueError(f"{name} has {len(getattr(self, name))} steps, expected {length}")
        for name in ("obs", "prev_actions", "prev_rewards"):
            if len(getattr(self, name)) != length + 1:
                raise ValueError(f"{name} needs {length + 1} entries (steps plus bootstrap)")

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def num_steps(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class SequenceBatch:
    """Time-major stack of B sequences."""

    obs: np.ndarray  # (L + 1, B, *obs_shape)
    prev_actions: np.ndarray  # (L + 1, B, A + 1)
    prev_rewards: np.ndarray  # (L + 1, B)
    actions: np.ndarray  # (L, B)
    rewards: np.ndarray  # (L, B)
    dones: np.ndarray  # (L, B)
    mask: np.ndarray  # (L, B)
    memory: MemoryState  # (B, d)

    @classmethod
    def collate(cls, sequences: list[TransitionSequence]) -> "SequenceBatch":
        if not sequences:
            raise ValueError("cannot collate an empty batch")
        return cls(
            obs=np.stack([s.obs for s in sequences], axis=1),
            prev_actions=np.stack([s.prev_actions for s in sequences], axis=1),
            prev_rewards=np.stack([s.prev_rewards for s in sequences], axis=1),
            actions=np.stack([s.actions for s in sequences], axis=1),
            rewards=np.stack([s.rewards for s in sequences], axis=1),
            dones=np.stack([s.dones for s in sequences], axis=1),
            mask=np.stack([s.mask for s in sequences], axis=1),
            memory=MemoryState.stack([s.memory for s in sequences]),
        )


class ReplayBuffer:
    """Ring buffer of sequences; the oldest entry is overwritten once full."""

    def __init__(self, capacity: int, min_replay: int = 0):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.min_replay = min_replay
        self._storage: list[TransitionSequence | None] = [None] * capacity
        self._next = 0
        self._size = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return self._size

    @property
    def ready(self) -> bool:
        return len(self) >= max(self.min_replay, 1)

    def add(self, sequence: TransitionSequence) -> None:
        with self._lock:
            self._storage[self._next] = sequence
            self._next = (self._next + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        with self._lock:
            size = self._size
        if size < max(self.min_replay, 1):
            raise ValueError(f"replay holds {size} sequences, needs {max(self.min_replay, 1)} before sampling")
        return rng.integers(size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[TransitionSequence]:
        """Uniform sample with replacement."""
        indices = self.sample_indices(batch_size, rng)
        with self._lock:
            return [self._storage[i] for i in indices]
