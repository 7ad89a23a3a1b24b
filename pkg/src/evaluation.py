"""Evaluation protocols: triangle choice maps over urn compositions and gridworld pickup fractions.

Every protocol runs greedy policies against the unmodified environments.
Triangle evaluations pit a white certain urn against each of the 66
compositions of the risky/ambiguous urn, repeated over row permutations of
the description and over trained seeds.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import pandas as pd
from cachetools import LRUCache, cached
from scipy import stats

from .constants import DEFAULT_PERMUTATIONS, GRID_EVAL_EPISODES, GRID_MARBLES, INDIFFERENCE_TOLERANCE, TRIANGLE_CELLS
from .ensemble import Ensemble, GreedyPolicy, MetaMemory, ensemble_forward, load_meta_policy
from .gridworld import PARTITION_MARBLES, GridTaskEnv
from .learner import discover_checkpoints
from .network import load_checkpoint
from .urns import (
    Color,
    Mode,
    Palette,
    Partition,
    UrnAction,
    UrnConfig,
    UrnTask,
    UrnTaskEnv,
    compositions,
    enumerate_triangle_configs,
    one_hot_action,
    sample_task,
)

logger = logging.getLogger(__name__)

RISKY_COLORS = (Color.WHITE, Color.GREEN, Color.RED)
NOVEL_COLORS = (Color.GREEN, Color.RED, Color.YELLOW)


@dataclass(frozen=True)
class TriangleGrid:
    """One value per composition of 10 marbles over three colors, in lexicographic order.

    `kind` is "rate" for choice frequencies in [0, 1] (with per-cell sample
    counts) and "value" for real-valued maps such as means and stds.
    """

    colors: tuple[Color, Color, Color]
    values: np.ndarray
    counts: np.ndarray | None = None
    timestep: int | None = None
    kind: str = "rate"

    def __post_init__(self):
        if len(self.values) != TRIANGLE_CELLS:
            raise ValueError(f"TriangleGrid needs {TRIANGLE_CELLS} cells, got {len(self.values)}")
        if self.kind == "rate" and (np.any(self.values < 0.0) or np.any(self.values > 1.0)):
            raise ValueError("choice rates must lie in [0, 1]")
        if self.counts is not None and len(self.counts) != TRIANGLE_CELLS:
            raise ValueError("counts must have one entry per cell")

    @property
    def configs(self) -> tuple[tuple[int, int, int], ...]:
        return compositions(10, 3)

    def value(self, config: tuple[int, int, int]) -> float:
        return float(self.values[self.configs.index(tuple(config))])

    def axis_counts(self, color: Color) -> np.ndarray:
        """Number of marbles of `color` in each cell."""
        return np.array([c[self.colors.index(color)] for c in self.configs])


def risk_neutral_baseline_grid(
    palette: Palette = Palette(), colors: tuple[Color, Color, Color] = RISKY_COLORS, certain: Color = Color.WHITE
) -> TriangleGrid:
    """1 where the risky urn's mean beats the certain urn, 0 where it loses, 0.5 on ties."""
    certain_mean, _ = UrnConfig.monochrome(certain).moments(palette)
    values = []
    for config in enumerate_triangle_configs(colors):
        mean, _ = config.moments(palette)
        if abs(mean - certain_mean) <= INDIFFERENCE_TOLERANCE:
            values.append(0.5)
        else:
            values.append(1.0 if mean > certain_mean else 0.0)
    return TriangleGrid(colors, np.array(values))


@cached(LRUCache(maxsize=32))
def mean_std_grids(
    palette: Palette = Palette(), colors: tuple[Color, Color, Color] = RISKY_COLORS
) -> tuple[TriangleGrid, TriangleGrid]:
    """Exact mean and std of one draw's reward for every composition."""
    moments = np.array([config.moments(palette) for config in enumerate_triangle_configs(colors)])
    return (
        TriangleGrid(colors, moments[:, 0], kind="value"),
        TriangleGrid(colors, moments[:, 1], kind="value"),
    )


def slope_along_axis(grid: TriangleGrid, color: Color) -> float:
    """Least-squares slope of the cell values against the count of one color."""
    slope, _ = np.polyfit(grid.axis_counts(color), grid.values, 1)
    return float(slope)


class Policy(Protocol):
    def initial(self, batch: int) -> MetaMemory: ...

    def act(self, obs: np.ndarray, memory: MetaMemory) -> tuple[np.ndarray, MetaMemory]: ...


@dataclass
class EvalReport:
    metadata: dict
    per_timestep: list[TriangleGrid]
    time_averaged: TriangleGrid
    records: pd.DataFrame = field(repr=False)


def _run_triangle_seed(
    policy: Policy,
    seed_index: int,
    mode: Mode,
    colors: tuple[Color, Color, Color],
    permutations: int,
    palette: Palette,
    partition: Partition,
    base_seed: int,
) -> np.ndarray:
    """Choices (horizon, cells, permutations) of one trained agent."""
    configs = enumerate_triangle_configs(colors)
    left = UrnConfig.monochrome(Color.WHITE)
    envs, observations = [], []
    for cell, config in enumerate(configs):
        task = UrnTask(left=left, right=config, partition=partition, mode=mode)
        for g in range(permutations):
            env = UrnTaskEnv(partition, mode, palette, np.random.default_rng([base_seed, seed_index, cell, g]), True)
            observations.append(env.reset(task))
            envs.append(env)

    obs = np.stack(observations)
    memory = policy.initial(len(envs))
    choices = np.zeros((mode.horizon, len(envs)), dtype=np.int64)
    for t in range(mode.horizon):
        actions, memory = policy.act(obs, memory)
        choices[t] = actions
        steps = [env.step(int(a)) for env, a in zip(envs, actions)]
        obs = np.stack([s[0] for s in steps])
        memory.record(actions, np.array([s[1] for s in steps]), UrnTaskEnv.num_actions)
    return choices.reshape(mode.horizon, len(configs), permutations)


def eval_triangle(
    policies: list[Policy],
    mode: Mode,
    colors: tuple[Color, Color, Color] = RISKY_COLORS,
    permutations: int = DEFAULT_PERMUTATIONS,
    palette: Palette = Palette(),
    partition: Partition = Partition.RISKY,
    seed: int = 0,
    metadata: dict | None = None,
) -> EvalReport:
    """Right-urn (risky or ambiguous) choice rates per cell and time step, pooled over agents."""
    if not policies:
        raise ValueError("eval_triangle needs at least one policy")
    mode = Mode(mode)
    with ThreadPoolExecutor(max_workers=len(policies)) as pool:
        per_seed = list(
            pool.map(
                lambda item: _run_triangle_seed(item[1], item[0], mode, colors, permutations, palette, partition, seed),
                enumerate(policies),
            )
        )

    choices = np.stack(per_seed)  # (seeds, horizon, cells, permutations)
    right = choices == UrnAction.RIGHT
    n = len(policies) * permutations
    per_timestep = [
        TriangleGrid(colors, right[:, t].sum(axis=(0, 2)) / n, np.full(TRIANGLE_CELLS, n), timestep=t)
        for t in range(mode.horizon)
    ]
    total = n * mode.horizon
    time_averaged = TriangleGrid(colors, right.sum(axis=(0, 1, 3)) / total, np.full(TRIANGLE_CELLS, total))

    seeds, steps, cells, perms = np.indices(choices.shape)
    records = pd.DataFrame(
        {
            "seed": seeds.ravel(),
            "timestep": steps.ravel(),
            "cell": cells.ravel(),
            "permutation": perms.ravel(),
            "choice": choices.ravel(),
        }
    )
    report_metadata = {
        "mode": mode.value,
        "colors": [c.value for c in colors],
        "permutations": permutations,
        "num_seeds": len(policies),
        "decisions_per_timestep": int(n * TRIANGLE_CELLS),
        **(metadata or {}),
    }
    logger.info(
        f"Evaluated {len(policies)} agents on {TRIANGLE_CELLS} cells x {permutations} permutations x {mode.horizon} steps"
    )
    return EvalReport(report_metadata, per_timestep, time_averaged, records)


def load_triangle_policies(
    checkpoints: str | Path, mode: Mode, stack: str = "plain", ensemble_dir: str | Path | None = None
) -> tuple[list[Policy], dict]:
    """Load one policy per seed checkpoint, rejecting checkpoints trained for another protocol."""
    policies, seeds, conditions = [], [], set()
    for path in discover_checkpoints(checkpoints):
        params, metadata = load_checkpoint(path)
        config = metadata.get("config", {})
        if config.get("env") != "urn" or config.get("probabilities") != Mode(mode).value:
            raise ValueError(f"{path} was trained on {config.get('env')}/{config.get('probabilities')}, not urn/{mode}")
        if stack == "meta":
            if ensemble_dir is None:
                raise ValueError("the meta stack needs an ensemble directory")
            policy, _ = load_meta_policy(path, ensemble_dir)
            conditions.add(("blue_reward", config.get("blue_reward")))
        elif stack == "plain":
            if metadata.get("mode") not in ("baseline", "risk"):
                raise ValueError(f"{path} holds a {metadata.get('mode')!r} checkpoint, expected baseline or risk")
            policy = GreedyPolicy(params)
            conditions.add(("beta", config.get("beta") if metadata.get("mode") == "risk" else 0.0))
        else:
            raise ValueError(f"stack must be 'plain' or 'meta', got {stack!r}")
        policies.append(policy)
        seeds.append(metadata.get("seed"))
    if len(conditions) > 1:
        raise ValueError(f"checkpoints under {checkpoints} mix training conditions: {sorted(conditions)}")
    return policies, {"stack": stack, "seeds": seeds, "condition": dict(conditions)}


def _first_step_q(ens: Ensemble, obs: np.ndarray) -> np.ndarray:
    batch = len(obs)
    prev_action = np.repeat(one_hot_action(None, ens.spec.num_actions)[None], batch, axis=0)
    q, _ = ensemble_forward(ens, obs, prev_action, np.zeros(batch, dtype=np.float32), ens.initial_memories(batch))
    return q


@dataclass(frozen=True)
class EnsembleStats:
    mean: TriangleGrid
    std: TriangleGrid
    spearman: float
    p_value: float


def ensemble_stats_grids(
    ens: Ensemble,
    colors: tuple[Color, Color, Color] = NOVEL_COLORS,
    permutations: int = DEFAULT_PERMUTATIONS,
    palette: Palette = Palette(),
    seed: int = 0,
) -> EnsembleStats:
    """Mean and std over members of the right-urn Q-value for every described composition.

    The rank correlation is taken between the std map and the count of the
    last color (yellow on the novel triangle).
    """
    configs = enumerate_triangle_configs(colors)
    left = UrnConfig.monochrome(Color.WHITE)
    observations = []
    for cell, config in enumerate(configs):
        task = UrnTask(left=left, right=config, partition=Partition.AMB_NOVEL, mode=Mode.DESCRIBED)
        for g in range(permutations):
            env = UrnTaskEnv(Partition.AMB_NOVEL, Mode.DESCRIBED, palette, np.random.default_rng([seed, cell, g]), True)
            observations.append(env.reset(task))
    q = _first_step_q(ens, np.stack(observations))
    right_q = q[..., UrnAction.RIGHT].reshape(len(configs), permutations, ens.size)

    mean = right_q.mean(axis=2).mean(axis=1)
    std = right_q.std(axis=2).mean(axis=1)
    std_grid = TriangleGrid(colors, std, kind="value")
    result = stats.spearmanr(std_grid.axis_counts(colors[-1]), std)
    return EnsembleStats(TriangleGrid(colors, mean, kind="value"), std_grid, float(result.statistic), float(result.pvalue))


def ensemble_disagreement(
    ens: Ensemble,
    partition: Partition,
    num_tasks: int = 500,
    palette: Palette = Palette(),
    seed: int = 0,
) -> float:
    """Mean per-action std of member Q-values over described tasks sampled from a partition."""
    rng = np.random.default_rng(seed)
    env = UrnTaskEnv(partition, Mode.DESCRIBED, palette, rng, testing=True)
    observations = [env.reset(sample_task(partition, Mode.DESCRIBED, rng, testing=True)) for _ in range(num_tasks)]
    q = _first_step_q(ens, np.stack(observations))
    return float(q.std(axis=-2).mean())


@dataclass
class GridEvalReport:
    """Mean pickup fraction per color and condition; None where a color never appeared."""

    metadata: dict
    fractions: dict[str, dict[str, float | None]]
    episodes: pd.DataFrame = field(repr=False)


def _run_grid_condition(
    policy: Policy, palette: Palette, episodes: int, seed: int, num_marbles: int
) -> tuple[dict[str, float | None], pd.DataFrame]:
    envs = [
        GridTaskEnv(Partition.AMB_NOVEL, palette, np.random.default_rng([seed, e]), num_marbles) for e in range(episodes)
    ]
    obs = np.stack([env.reset() for env in envs])
    memory = policy.initial(episodes)
    for _ in range(GridTaskEnv.horizon):
        actions, memory = policy.act(obs, memory)
        steps = [env.step(int(a)) for env, a in zip(envs, actions)]
        obs = np.stack([s[0] for s in steps])
        memory.record(actions, np.array([s[1] for s in steps]), GridTaskEnv.num_actions)

    rows = []
    for e, env in enumerate(envs):
        for color in PARTITION_MARBLES[Partition.AMB_NOVEL]:
            rows.append(
                {
                    "episode": e,
                    "color": color.value,
                    "picked": env.state.pickups[color],
                    "initial": env.state.initial_counts[color],
                }
            )
    frame = pd.DataFrame(rows, columns=["episode", "color", "picked", "initial"])
    present = frame[frame["initial"] > 0]
    means = (present["picked"] / present["initial"]).groupby(present["color"]).mean()
    fractions = {
        color.value: (float(means[color.value]) if color.value in means.index else None)
        for color in PARTITION_MARBLES[Partition.AMB_NOVEL]
    }
    return fractions, frame


def eval_grid(
    policies: dict[str, Policy],
    palette: Palette = Palette(),
    episodes: int = GRID_EVAL_EPISODES,
    seed: int = 0,
    num_marbles: int = GRID_MARBLES,
) -> GridEvalReport:
    """Pickup fractions on gridworlds where gray marbles replace blue, one entry per condition label."""
    fractions, frames = {}, []
    for label, policy in policies.items():
        fractions[label], frame = _run_grid_condition(policy, palette, episodes, seed, num_marbles)
        frames.append(frame.assign(condition=label))
        logger.info(f"Grid condition {label}: {fractions[label]}")
    metadata = {"episodes": episodes, "num_marbles": num_marbles, "seed": seed, "conditions": list(policies)}
    episodes_frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    return GridEvalReport(metadata, fractions, episodes_frame)


def load_grid_policies(checkpoints: str | Path, ensemble_dir: str | Path) -> dict[str, Policy]:
    """Meta-policies keyed by their blue-reward condition."""
    policies: dict[str, Policy] = {}
    for path in discover_checkpoints(checkpoints):
        policy, metadata = load_meta_policy(path, ensemble_dir)
        config = metadata.get("config", {})
        if config.get("env") != "grid":
            raise ValueError(f"{path} was not trained on the gridworld")
        label = f"blue={config.get('blue_reward')}"
        if label in policies:
            label = f"{label}/seed={metadata.get('seed')}"
        policies[label] = policy
    return policies
