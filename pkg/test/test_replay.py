"""Tests for src.replay module."""

import threading

import numpy as np
import pytest
from scipy import stats

from src.network import MemoryState
from src.replay import ReplayBuffer, SequenceBatch, TransitionSequence


def _sequence(tag: float = 0.0, length: int = 2) -> TransitionSequence:
    return TransitionSequence(
        obs=np.full((length + 1, 4), tag, dtype=np.float32),
        prev_actions=np.zeros((length + 1, 3), dtype=np.float32),
        prev_rewards=np.zeros(length + 1, dtype=np.float32),
        actions=np.zeros(length, dtype=np.int64),
        rewards=np.full(length, tag, dtype=np.float32),
        dones=np.zeros(length, dtype=bool),
        mask=np.array([1.0] * (length - 1) + [0.0], dtype=np.float32),
        memory=MemoryState.zeros(6),
    )


class TestTransitionSequence:
    """Tests for TransitionSequence validation."""

    def test_bootstrap_entry_required(self):
        """Test that inputs need one more entry than steps."""
        good = _sequence()
        with pytest.raises(ValueError, match="steps plus bootstrap"):
            TransitionSequence(
                obs=good.obs[:-1],
                prev_actions=good.prev_actions,
                prev_rewards=good.prev_rewards,
                actions=good.actions,
                rewards=good.rewards,
                dones=good.dones,
                mask=good.mask,
                memory=good.memory,
            )

    def test_step_arrays_agree(self):
        """Test that per-step arrays share one length."""
        good = _sequence()
        with pytest.raises(ValueError, match="rewards has 1 steps"):
            TransitionSequence(
                obs=good.obs,
                prev_actions=good.prev_actions,
                prev_rewards=good.prev_rewards,
                actions=good.actions,
                rewards=good.rewards[:1],
                dones=good.dones,
                mask=good.mask,
                memory=good.memory,
            )

    def test_num_steps_counts_mask(self):
        """Test that padding is not counted."""
        sequence = _sequence(length=4)
        assert sequence.length == 4
        assert sequence.num_steps == 3


class TestSequenceBatch:
    """Tests for SequenceBatch.collate."""

    def test_time_major(self):
        """Test that sequences stack along axis 1."""
        batch = SequenceBatch.collate([_sequence(0.0), _sequence(1.0), _sequence(2.0)])
        assert batch.obs.shape == (3, 3, 4)
        assert batch.actions.shape == (2, 3)
        assert batch.memory.h.shape == (3, 6)
        np.testing.assert_array_equal(batch.rewards[0], [0.0, 1.0, 2.0])

    def test_empty(self):
        """Test that an empty batch is rejected."""
        with pytest.raises(ValueError, match="empty batch"):
            SequenceBatch.collate([])


class TestReplayBuffer:
    """Tests for ReplayBuffer class."""

    def test_ring_overwrites_oldest(self):
        """Test that a full buffer drops its oldest sequence."""
        buffer = ReplayBuffer(capacity=3)
        for tag in range(5):
            buffer.add(_sequence(float(tag)))
        assert len(buffer) == 3
        seen = {float(s.rewards[0]) for s in buffer.sample(200, np.random.default_rng(0))}
        assert seen == {2.0, 3.0, 4.0}

    @pytest.mark.parametrize("capacity,added", [(10, 4), (5, 12)])
    def test_uniform_over_occupied_slots(self, capacity, added):
        """Test that draws are uniform with replacement over the stored sequences, before and after wrapping."""
        buffer = ReplayBuffer(capacity=capacity)
        for tag in range(added):
            buffer.add(_sequence(float(tag)))
        occupied = min(capacity, added)
        draws = 20_000
        indices = buffer.sample_indices(draws, np.random.default_rng(0))
        assert indices.min() >= 0
        assert indices.max() < occupied
        observed = np.bincount(indices, minlength=occupied)
        assert stats.chisquare(observed, np.full(occupied, draws / occupied)).pvalue > 0.001

        tags = [float(s.rewards[0]) for s in buffer.sample(2_000, np.random.default_rng(1))]
        assert set(tags) == {float(t) for t in range(added - occupied, added)}

    def test_min_replay(self):
        """Test that sampling waits for min_replay sequences."""
        buffer = ReplayBuffer(capacity=10, min_replay=2)
        buffer.add(_sequence())
        assert not buffer.ready
        with pytest.raises(ValueError, match="needs 2"):
            buffer.sample(1, np.random.default_rng(0))
        buffer.add(_sequence())
        assert buffer.ready
        assert len(buffer.sample(5, np.random.default_rng(0))) == 5

    def test_empty_never_ready(self):
        """Test that an empty buffer cannot be sampled even with min_replay 0."""
        buffer = ReplayBuffer(capacity=4)
        assert not buffer.ready
        with pytest.raises(ValueError, match="holds 0"):
            buffer.sample(1, np.random.default_rng(0))

    def test_invalid_capacity(self):
        """Test that capacity must be positive."""
        with pytest.raises(ValueError, match="capacity"):
            ReplayBuffer(capacity=0)

    def test_concurrent_adds(self):
        """Test that adds from several threads are all counted."""
        buffer = ReplayBuffer(capacity=1000)

        def writer():
            for _ in range(100):
                buffer.add(_sequence())

        threads = [threading.Thread(target=writer) for _ in range(4)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        assert len(buffer) == 400
