"""Tests for src.evaluation module."""

import numpy as np
import pytest

from src.config import TrainConfig
from src.ensemble import Ensemble, MetaMemory
from src.evaluation import (
    NOVEL_COLORS,
    RISKY_COLORS,
    TriangleGrid,
    ensemble_disagreement,
    ensemble_stats_grids,
    eval_grid,
    eval_triangle,
    load_triangle_policies,
    mean_std_grids,
    risk_neutral_baseline_grid,
    slope_along_axis,
)
from src.learner import CHECKPOINT_NAME
from src.network import MemoryState, NetSpec, init_params, save_checkpoint
from src.urns import URN_COLORS, Color, Mode, Palette, Partition


class _StubPolicy:
    """Batched policy with a fixed rule; memory only tracks the previous action."""

    def __init__(self, rule, num_actions: int = 2):
        self.rule = rule
        self.num_actions = num_actions

    def initial(self, batch: int) -> MetaMemory:
        prev_action = np.zeros((batch, self.num_actions + 1), dtype=np.float32)
        prev_action[:, -1] = 1.0
        return MetaMemory(MemoryState.zeros(1, batch), [], prev_action, np.zeros(batch, dtype=np.float32))

    def act(self, obs, memory):
        return self.rule(obs, memory), memory


def _always(action: int):
    return _StubPolicy(lambda obs, memory: np.full(len(obs), action))


def _alternating():
    """Right on the first draw, then the opposite of the previous choice."""

    def rule(obs, memory):
        first = memory.prev_action[:, -1] == 1.0
        previous = memory.prev_action[:, :2].argmax(axis=1)
        return np.where(first, 1, 1 - previous)

    return _StubPolicy(rule)


def _mean_greedy(palette: Palette = Palette()):
    """Reads the right urn's description and takes it when its mean reward is positive."""
    rewards = np.array([palette.reward(c) for c in URN_COLORS])

    def rule(obs, memory):
        counts = obs[:, 50:100].reshape(len(obs), 10, len(URN_COLORS)).sum(axis=1)
        return (counts @ rewards / 10 > 0).astype(int)

    return _StubPolicy(rule)


class TestTriangleGrid:
    """Tests for TriangleGrid validation."""

    def test_cell_count(self):
        """Test that a grid has 66 cells."""
        with pytest.raises(ValueError, match="66 cells"):
            TriangleGrid(RISKY_COLORS, np.zeros(65))

    def test_rates_bounded(self):
        """Test that choice rates stay in [0, 1]."""
        with pytest.raises(ValueError, match="rates"):
            TriangleGrid(RISKY_COLORS, np.full(66, 1.5))
        TriangleGrid(RISKY_COLORS, np.full(66, 1.5), kind="value")

    def test_axis_counts(self):
        """Test marble counts along one color."""
        grid = TriangleGrid(RISKY_COLORS, np.zeros(66))
        assert grid.axis_counts(Color.RED)[0] == 10
        assert grid.axis_counts(Color.WHITE)[-1] == 10


class TestRiskNeutralBaseline:
    """Tests for risk_neutral_baseline_grid function."""

    def test_named_cells(self):
        """Test the all-green, coin-flip and all-red cells."""
        grid = risk_neutral_baseline_grid()
        assert grid.value((0, 10, 0)) == 1.0
        assert grid.value((0, 5, 5)) == 0.5
        assert grid.value((0, 0, 10)) == 0.0
        assert grid.value((10, 0, 0)) == 0.5

    def test_antisymmetric_in_green_and_red(self):
        """Test that swapping green and red flips the choice."""
        grid = risk_neutral_baseline_grid()
        for a, b, c in grid.configs:
            assert grid.value((a, b, c)) + grid.value((a, c, b)) == pytest.approx(1.0)

    def test_slope_along_green(self):
        """Test that more green marbles favour the risky urn."""
        grid = risk_neutral_baseline_grid()
        assert slope_along_axis(grid, Color.GREEN) > 0
        assert slope_along_axis(grid, Color.RED) < 0


class TestMeanStdGrids:
    """Tests for mean_std_grids function."""

    def test_coin_flip_cell(self):
        """Test that five green and five red marbles have mean 0 and std 1."""
        mean, std = mean_std_grids()
        assert mean.value((0, 5, 5)) == pytest.approx(0.0)
        assert std.value((0, 5, 5)) == pytest.approx(1.0)

    def test_corners_are_certain(self):
        """Test that monochrome urns have zero std."""
        _, std = mean_std_grids()
        for corner in ((10, 0, 0), (0, 10, 0), (0, 0, 10)):
            assert std.value(corner) == pytest.approx(0.0)

    def test_blue_reward_changes_novel_mean(self):
        """Test that palette rewards feed the mean map."""
        mean, _ = mean_std_grids(Palette(yellow=2.0), NOVEL_COLORS)
        assert mean.value((0, 0, 10)) == pytest.approx(2.0)


class TestEvalTriangle:
    """Tests for eval_triangle function."""

    def test_described_decision_count(self):
        """Test five seeds x 100 permutations x 66 cells per grid."""
        report = eval_triangle([_always(1) for _ in range(5)], Mode.DESCRIBED)
        assert report.metadata["decisions_per_timestep"] == 33_000
        assert len(report.per_timestep) == 1
        assert len(report.records) == 33_000
        np.testing.assert_array_equal(report.per_timestep[0].values, np.ones(66))
        np.testing.assert_array_equal(report.per_timestep[0].counts, np.full(66, 500))

    def test_mean_greedy_matches_baseline(self):
        """Test that a mean-greedy agent agrees with the risk-neutral grid away from ties."""
        report = eval_triangle([_mean_greedy()], Mode.DESCRIBED, permutations=3)
        baseline = risk_neutral_baseline_grid()
        decided = baseline.values != 0.5
        np.testing.assert_array_equal(report.time_averaged.values[decided], baseline.values[decided])

    def test_time_average_is_mean_of_steps(self):
        """Test that the pooled experiential grid equals the mean of the 20 per-step grids."""
        report = eval_triangle([_alternating(), _alternating()], Mode.EXPERIENTIAL, permutations=2)
        assert len(report.per_timestep) == 20
        assert report.per_timestep[0].timestep == 0
        np.testing.assert_array_equal(report.per_timestep[0].values, np.ones(66))
        np.testing.assert_array_equal(report.per_timestep[1].values, np.zeros(66))
        stacked = np.mean([g.values for g in report.per_timestep], axis=0)
        np.testing.assert_allclose(report.time_averaged.values, stacked)
        np.testing.assert_allclose(report.time_averaged.values, 0.5)
        assert report.time_averaged.timestep is None

    def test_records_frame(self):
        """Test the long-form decision records."""
        report = eval_triangle([_always(0)], Mode.EXPERIENTIAL, permutations=2)
        assert list(report.records.columns) == ["seed", "timestep", "cell", "permutation", "choice"]
        assert len(report.records) == 20 * 66 * 2
        assert (report.records["choice"] == 0).all()

    def test_needs_a_policy(self):
        """Test that an empty policy list is rejected."""
        with pytest.raises(ValueError, match="at least one policy"):
            eval_triangle([], Mode.DESCRIBED)


class TestLoadTrianglePolicies:
    """Tests for load_triangle_policies function."""

    def _save(self, path, mode="baseline", **config):
        cfg = TrainConfig(width=8).replace(**config)
        spec = NetSpec.with_width((105,), 2, 8)
        save_checkpoint(path / CHECKPOINT_NAME, init_params(spec, 0), {"seed": 0, "config": cfg.to_dict(), "mode": mode})

    def test_loads_seeds(self, tmp_path):
        """Test that every seed directory yields one policy."""
        self._save(tmp_path / "seed_0", mode="risk", beta=-1.0)
        self._save(tmp_path / "seed_1", mode="risk", beta=-1.0)
        policies, info = load_triangle_policies(tmp_path, Mode.DESCRIBED)
        assert len(policies) == 2
        assert info["condition"] == {"beta": -1.0}
        report = eval_triangle(policies, Mode.DESCRIBED, permutations=1)
        assert report.metadata["num_seeds"] == 2

    def test_rejects_other_protocol(self, tmp_path):
        """Test that a described checkpoint is not evaluated experientially."""
        self._save(tmp_path / "seed_0")
        with pytest.raises(ValueError, match="not urn/experiential"):
            load_triangle_policies(tmp_path, Mode.EXPERIENTIAL)

    def test_rejects_mixed_conditions(self, tmp_path):
        """Test that checkpoints with different betas are not pooled."""
        self._save(tmp_path / "seed_0", mode="risk", beta=-1.0)
        self._save(tmp_path / "seed_1", mode="risk", beta=1.0)
        with pytest.raises(ValueError, match="mix training conditions"):
            load_triangle_policies(tmp_path, Mode.DESCRIBED)

    def test_meta_stack_needs_ensemble(self, tmp_path):
        """Test that meta evaluation requires an ensemble directory."""
        self._save(tmp_path / "seed_0", mode="meta")
        with pytest.raises(ValueError, match="ensemble directory"):
            load_triangle_policies(tmp_path, Mode.DESCRIBED, stack="meta")


class TestEnsembleStats:
    """Tests for ensemble_stats_grids and ensemble_disagreement."""

    def test_identical_members_agree(self):
        """Test that copies of one network have zero disagreement."""
        params = init_params(NetSpec.with_width((105,), 2, 8), 0)
        ens = Ensemble.of([params, params.copy()])
        assert ensemble_disagreement(ens, Partition.AMB_NOVEL, num_tasks=20) == pytest.approx(0.0, abs=1e-6)
        stats = ensemble_stats_grids(ens, permutations=2)
        np.testing.assert_allclose(stats.std.values, 0.0, atol=1e-6)

    def test_distinct_members(self):
        """Test grid shapes and a finite rank correlation for distinct members."""
        spec = NetSpec.with_width((105,), 2, 8)
        ens = Ensemble.of([init_params(spec, s) for s in range(3)])
        stats = ensemble_stats_grids(ens, permutations=2)
        assert stats.mean.kind == stats.std.kind == "value"
        assert stats.std.colors == NOVEL_COLORS
        assert (stats.std.values > 0).all()
        assert -1.0 <= stats.spearman <= 1.0
        assert ensemble_disagreement(ens, Partition.RISKY, num_tasks=20) > 0


class TestEvalGrid:
    """Tests for eval_grid function."""

    def test_no_marbles_gives_none(self):
        """Test that colors that never appeared report None."""
        report = eval_grid({"stay": _StubPolicy(lambda obs, m: np.zeros(len(obs)), 4)}, episodes=3, num_marbles=0)
        assert all(v is None for v in report.fractions["stay"].values())
        assert len(report.episodes) == 3 * len(report.fractions["stay"])

    def test_fractions_bounded(self):
        """Test that pickup fractions lie in [0, 1] and colors follow the novel partition."""
        rng = np.random.default_rng(0)
        policy = _StubPolicy(lambda obs, m: rng.integers(4, size=len(obs)), 4)
        report = eval_grid({"random": policy}, episodes=4)
        fractions = report.fractions["random"]
        assert Color.BLUE.value not in fractions
        assert Color.GRAY.value in fractions
        for value in fractions.values():
            assert value is None or 0.0 <= value <= 1.0
        assert set(report.episodes["condition"]) == {"random"}
        assert report.metadata["conditions"] == ["random"]


