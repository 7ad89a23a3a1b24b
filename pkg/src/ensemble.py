"""Ensemble of risk-trained Q-networks and the meta-policy that acts on their disagreement.

Members are trained independently on the risky partition, then frozen. The
meta-policy never sees the raw observation: its input is an aggregate of
the members' Q-values (per-action mean and std, or the raw K x A matrix),
which it learns to map to actions on the ambiguous partition.
"""

import json
import logging
from collections.abc import Hashable
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import TrainConfig
from .learner import (
    CHECKPOINT_NAME,
    Environment,
    TrainResult,
    build_spec,
    make_environment,
    run_training,
    train,
)
from .network import MemoryState, NetParams, NetSpec, forward, load_checkpoint
from .urns import Partition, one_hot_action

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class Ensemble:
    """K frozen members sharing one NetSpec."""

    members: tuple[NetParams, ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("Ensemble needs at least one member")
        if len({m.spec for m in self.members}) != 1:
            raise ValueError("ensemble members must share one NetSpec")

    @classmethod
    def of(cls, members: list[NetParams]) -> "Ensemble":
        return cls(tuple(m.frozen() for m in members))

    @property
    def spec(self) -> NetSpec:
        return self.members[0].spec

    @property
    def size(self) -> int:
        return len(self.members)

    def initial_memories(self, batch: int | None = None) -> list[MemoryState]:
        return [MemoryState.zeros(self.spec.recurrent_width, batch, self.members[0].dtype) for _ in self.members]

    def fingerprint(self) -> list[bytes]:
        return [m.data.tobytes() for m in self.members]


class AggregatedStats(NamedTuple):
    """Per-action mean and population std over members."""

    mean: np.ndarray
    std: np.ndarray

    def features(self) -> np.ndarray:
        return np.concatenate([self.mean, self.std], axis=-1)


def ensemble_forward(
    ens: Ensemble,
    obs: np.ndarray,
    prev_action: np.ndarray,
    prev_reward: float | np.ndarray,
    memories: list[MemoryState],
) -> tuple[np.ndarray, list[MemoryState]]:
    """Each member's Q-vector and advanced memory. Q has shape (..., K, A)."""
    if len(memories) != ens.size:
        raise ValueError(f"{len(memories)} memories for {ens.size} members")
    outputs = [forward(m, obs, prev_action, prev_reward, mem) for m, mem in zip(ens.members, memories)]
    q = np.stack([q for q, _ in outputs], axis=-2)
    return q, [mem for _, mem in outputs]


def aggregate(q_matrix: np.ndarray) -> AggregatedStats:
    if q_matrix.shape[-2] < 1:
        raise ValueError("aggregate needs at least one member")
    return AggregatedStats(mean=q_matrix.mean(axis=-2), std=q_matrix.std(axis=-2))


def meta_features(q_matrix: np.ndarray, aggregator: str = "moments") -> np.ndarray:
    """Meta-policy input: moments (2A values) or the flattened raw K x A matrix."""
    if aggregator == "moments":
        return aggregate(q_matrix).features().astype(np.float32)
    if aggregator == "identity":
        return q_matrix.reshape(*q_matrix.shape[:-2], -1).astype(np.float32)
    raise ValueError(f"aggregator must be 'moments' or 'identity', got {aggregator!r}")


def meta_input_shape(ens: Ensemble, aggregator: str) -> tuple[int]:
    actions = ens.spec.num_actions
    return (2 * actions,) if aggregator == "moments" else (ens.size * actions,)


class MetaEnvironment:
    """Wraps a task environment so that observations are aggregated ensemble outputs.

    The wrapper owns the members' memories and advances them with the
    action/reward stream chosen by the meta-policy.
    """

    def __init__(self, base: Environment, ens: Ensemble, aggregator: str = "moments"):
        self.base = base
        self.ensemble = ens
        self.aggregator = aggregator
        self.num_actions = base.num_actions
        self.horizon = base.horizon
        self.obs_shape = meta_input_shape(ens, aggregator)
        self._next_memories: list[MemoryState] = []
        self.last_q: np.ndarray | None = None

    def _observe(self, obs, action, reward, memories) -> tuple[np.ndarray, np.ndarray, list[MemoryState]]:
        q, next_memories = ensemble_forward(
            self.ensemble, obs, one_hot_action(action, self.num_actions), reward, memories
        )
        return meta_features(q, self.aggregator), q, next_memories

    def reset(self) -> np.ndarray:
        obs = self.base.reset()
        features, self.last_q, self._next_memories = self._observe(obs, None, 0.0, self.ensemble.initial_memories())
        return features

    def propose(self, action: int) -> Hashable:
        return self.base.propose(action)

    def preview(self, action: int, outcome: Hashable) -> tuple[np.ndarray, float, bool]:
        obs, reward, done = self.base.preview(action, outcome)
        features, _, _ = self._observe(obs, action, reward, self._next_memories)
        return features, reward, done

    def commit(self, action: int, outcome: Hashable) -> tuple[np.ndarray, float, bool]:
        obs, reward, done = self.base.commit(action, outcome)
        features, self.last_q, self._next_memories = self._observe(obs, action, reward, self._next_memories)
        return features, reward, done

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        return self.commit(action, self.propose(action))


def train_ensemble(cfg: TrainConfig, seeds: list[int], out_dir: str | Path | None = None) -> Ensemble:
    """Independent baseline trainings on the risky partition, one per seed."""
    if len(seeds) < 2:
        raise ValueError(f"an ensemble needs at least two members, got {len(seeds)} seeds")
    if len(set(seeds)) != len(seeds):
        raise ValueError("ensemble seeds must be distinct")
    member_cfg = cfg.replace(partition=Partition.RISKY.value)
    out_dir = Path(out_dir) if out_dir is not None else None

    members, entries = [], []
    for k, seed in enumerate(seeds):
        member_dir = out_dir / f"member_{k:02d}" if out_dir is not None else None
        logger.info(f"Training ensemble member {k + 1}/{len(seeds)} (seed {seed})")
        result = train("baseline", member_cfg, seed, member_dir)
        members.append(result.params)
        if member_dir is not None:
            entries.append({"path": f"{member_dir.name}/{CHECKPOINT_NAME}", "seed": seed})

    if out_dir is not None:
        manifest = {"members": entries, "config": member_cfg.to_dict()}
        (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
        logger.info(f"Wrote ensemble manifest with {len(entries)} members to {out_dir}")
    return Ensemble.of(members)


def load_ensemble(directory: str | Path) -> Ensemble:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"Ensemble manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    members = [load_checkpoint(directory / entry["path"])[0] for entry in manifest["members"]]
    logger.info(f"Loaded ensemble of {len(members)} members from {directory}")
    return Ensemble.of(members)


def train_meta(
    ens: Ensemble, cfg: TrainConfig, seed: int, out_dir: str | Path | None = None
) -> TrainResult:
    """Train the meta-policy on the ambiguous-seen partition with the ensemble frozen inside the environment."""
    meta_cfg = cfg.replace(partition=Partition.AMB_SEEN.value)

    def env_factory(rng: np.random.Generator) -> MetaEnvironment:
        return MetaEnvironment(make_environment(meta_cfg, rng), ens, meta_cfg.aggregator)

    spec = build_spec(meta_cfg, env_factory(np.random.default_rng(0)), use_prev_inputs=meta_cfg.meta_prev_inputs)
    metadata = {"mode": "meta", "ensemble_size": ens.size, "blue_reward": meta_cfg.blue_reward}
    return run_training(env_factory, spec, meta_cfg, seed, out_dir, shaper=None, metadata=metadata)


@dataclass
class MetaMemory:
    """Recurrent state of the meta-policy and every member, plus the previous action and reward."""

    meta: MemoryState
    members: list[MemoryState]
    prev_action: np.ndarray
    prev_reward: np.ndarray

    @classmethod
    def initial(cls, meta_params: NetParams, ens: Ensemble, batch: int) -> "MetaMemory":
        num_actions = meta_params.spec.num_actions
        return cls(
            meta=MemoryState.zeros(meta_params.spec.recurrent_width, batch, meta_params.dtype),
            members=ens.initial_memories(batch),
            prev_action=np.repeat(one_hot_action(None, num_actions)[None], batch, axis=0),
            prev_reward=np.zeros(batch, dtype=np.float32),
        )

    def record(self, actions: np.ndarray, rewards: np.ndarray, num_actions: int) -> None:
        self.prev_action = np.eye(num_actions + 1, dtype=np.float32)[actions]
        self.prev_reward = np.asarray(rewards, dtype=np.float32)


def meta_act(
    meta_params: NetParams,
    ens: Ensemble,
    obs: np.ndarray,
    memory: MetaMemory,
    aggregator: str = "moments",
) -> tuple[np.ndarray, MetaMemory, np.ndarray]:
    """Greedy meta actions for a batch of raw observations.

    Returns the actions, the advanced memories and the members' Q (B, K, A).
    """
    q_ens, members = ensemble_forward(ens, obs, memory.prev_action, memory.prev_reward, memory.members)
    features = meta_features(q_ens, aggregator)
    q_meta, meta = forward(meta_params, features, memory.prev_action, memory.prev_reward, memory.meta)
    actions = q_meta.argmax(axis=-1)
    return actions, MetaMemory(meta, members, memory.prev_action, memory.prev_reward), q_ens


class GreedyPolicy:
    """Batched greedy policy over a plain recurrent Q-network."""

    def __init__(self, params: NetParams):
        self.params = params

    def initial(self, batch: int) -> MetaMemory:
        num_actions = self.params.spec.num_actions
        return MetaMemory(
            meta=MemoryState.zeros(self.params.spec.recurrent_width, batch, self.params.dtype),
            members=[],
            prev_action=np.repeat(one_hot_action(None, num_actions)[None], batch, axis=0),
            prev_reward=np.zeros(batch, dtype=np.float32),
        )

    def act(self, obs: np.ndarray, memory: MetaMemory) -> tuple[np.ndarray, MetaMemory]:
        q, meta = forward(self.params, obs, memory.prev_action, memory.prev_reward, memory.meta)
        return q.argmax(axis=-1), MetaMemory(meta, [], memory.prev_action, memory.prev_reward)


class MetaPolicy:
    """Batched greedy meta-policy over a frozen ensemble."""

    def __init__(self, meta_params: NetParams, ens: Ensemble, aggregator: str = "moments"):
        expected = meta_input_shape(ens, aggregator)
        if meta_params.spec.input_shape != expected:
            raise ValueError(
                f"meta network expects input {meta_params.spec.input_shape}, ensemble gives {expected} ({aggregator})"
            )
        self.params = meta_params
        self.ensemble = ens
        self.aggregator = aggregator

    def initial(self, batch: int) -> MetaMemory:
        return MetaMemory.initial(self.params, self.ensemble, batch)

    def act(self, obs: np.ndarray, memory: MetaMemory) -> tuple[np.ndarray, MetaMemory]:
        actions, memory, _ = meta_act(self.params, self.ensemble, obs, memory, self.aggregator)
        return actions, memory


def load_meta_policy(checkpoint: str | Path, ensemble_dir: str | Path) -> tuple[MetaPolicy, dict]:
    params, metadata = load_checkpoint(checkpoint)
    if metadata.get("mode") != "meta":
        raise ValueError(f"{checkpoint} is not a meta-policy checkpoint (mode {metadata.get('mode')!r})")
    aggregator = metadata.get("config", {}).get("aggregator", "moments")
    return MetaPolicy(params, load_ensemble(ensemble_dir), aggregator), metadata

