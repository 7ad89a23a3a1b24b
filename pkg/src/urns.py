"""Two-urn decision tasks in described and experiential variants."""

import logging
from dataclasses import dataclass
from enum import IntEnum, StrEnum

import numpy as np
from cachetools import LRUCache, cached

from .constants import DESCRIBED_HORIZON, EXPERIENTIAL_HORIZON, MARBLES_PER_URN, TRIANGLE_CELLS

logger = logging.getLogger(__name__)


class Color(StrEnum):
    WHITE = "white"
    GREEN = "green"
    RED = "red"
    BLUE = "blue"
    YELLOW = "yellow"
    GRAY = "gray"

    @property
    def initial(self) -> str:
        return "gy" if self is Color.GRAY else self.value[0]

    @classmethod
    def parse(cls, name: str) -> "Color":
        """Accept a full name or an initial (W, G, R, B, Y, GY)."""
        key = name.strip().lower()
        for color in cls:
            if key in (color.value, color.initial):
                return color
        raise ValueError(f"unknown color: {name!r}")


# Marble colors an urn can hold; index order of every urn vector
URN_COLORS = (Color.WHITE, Color.GREEN, Color.RED, Color.BLUE, Color.YELLOW)


class Partition(StrEnum):
    RISKY = "risky"
    AMB_SEEN = "amb_seen"
    AMB_NOVEL = "amb_novel"


class Mode(StrEnum):
    DESCRIBED = "described"
    EXPERIENTIAL = "experiential"

    @property
    def horizon(self) -> int:
        return DESCRIBED_HORIZON if self is Mode.DESCRIBED else EXPERIENTIAL_HORIZON


class UrnAction(IntEnum):
    LEFT = 0
    RIGHT = 1


@dataclass(frozen=True)
class Palette:
    """Reward of each marble color. White, green and red are fixed."""

    blue: float = -1.0
    yellow: float = 0.0
    gray: float = 0.0

    def reward(self, color: Color) -> float:
        match color:
            case Color.WHITE:
                return 0.0
            case Color.GREEN:
                return 1.0
            case Color.RED:
                return -1.0
            case Color.BLUE:
                return self.blue
            case Color.YELLOW:
                return self.yellow
            case Color.GRAY:
                return self.gray
        raise ValueError(f"unknown color: {color!r}")

    def urn_rewards(self) -> np.ndarray:
        return np.array([self.reward(c) for c in URN_COLORS], dtype=np.float64)

    @classmethod
    def from_config(cls, cfg) -> "Palette":
        return cls(blue=cfg.blue_reward, yellow=cfg.yellow_reward, gray=cfg.gray_reward)


@dataclass(frozen=True)
class UrnConfig:
    """Marble counts per color, aligned with URN_COLORS."""

    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != len(URN_COLORS):
            raise ValueError(f"UrnConfig needs {len(URN_COLORS)} counts, got {len(self.counts)}")
        if any(n < 0 for n in self.counts) or sum(self.counts) != MARBLES_PER_URN:
            raise ValueError(f"UrnConfig counts must be non-negative and sum to {MARBLES_PER_URN}: {self.counts}")

    @classmethod
    def from_mapping(cls, counts: dict[Color, int]) -> "UrnConfig":
        return cls(tuple(int(counts.get(c, 0)) for c in URN_COLORS))

    @classmethod
    def monochrome(cls, color: Color) -> "UrnConfig":
        return cls.from_mapping({color: MARBLES_PER_URN})

    def count(self, color: Color) -> int:
        return self.counts[URN_COLORS.index(color)]

    @property
    def colors(self) -> tuple[Color, ...]:
        return tuple(c for c, n in zip(URN_COLORS, self.counts) if n > 0)

    @property
    def is_monochrome(self) -> bool:
        return len(self.colors) == 1

    def probabilities(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64) / MARBLES_PER_URN

    def moments(self, palette: Palette) -> tuple[float, float]:
        """Mean and population std of the reward of one draw."""
        probs = self.probabilities()
        rewards = palette.urn_rewards()
        mean = probs @ rewards
        return float(mean), float(np.sqrt(probs @ (rewards - mean) ** 2))

    def to_dict(self) -> dict[str, int]:
        return {c.value: n for c, n in zip(URN_COLORS, self.counts)}


@dataclass(frozen=True)
class UrnTask:
    left: UrnConfig
    right: UrnConfig
    partition: Partition
    mode: Mode

    def __post_init__(self):
        if not self.left.is_monochrome:
            raise ValueError("left urn must be monochromatic")

    @property
    def horizon(self) -> int:
        return self.mode.horizon

    def urn(self, action: int) -> UrnConfig:
        return self.left if UrnAction(action) is UrnAction.LEFT else self.right

    def to_dict(self) -> dict:
        return {
            "partition": self.partition.value,
            "mode": self.mode.value,
            "horizon": self.horizon,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }


# (partition, testing) -> (left urn colors, right urn colors)
PARTITION_COLORS: dict[tuple[Partition, bool], tuple[tuple[Color, ...], tuple[Color, ...]]] = {
    (Partition.RISKY, False): ((Color.WHITE, Color.GREEN, Color.RED), (Color.WHITE, Color.GREEN, Color.RED)),
    (Partition.RISKY, True): ((Color.WHITE,), (Color.WHITE, Color.GREEN, Color.RED)),
    (Partition.AMB_SEEN, False): (
        (Color.WHITE, Color.GREEN, Color.RED, Color.BLUE),
        (Color.WHITE, Color.GREEN, Color.RED, Color.BLUE),
    ),
    (Partition.AMB_SEEN, True): ((Color.WHITE,), (Color.WHITE, Color.GREEN, Color.RED, Color.BLUE)),
    (Partition.AMB_NOVEL, False): ((Color.WHITE,), (Color.GREEN, Color.RED, Color.YELLOW)),
    (Partition.AMB_NOVEL, True): ((Color.WHITE,), (Color.GREEN, Color.RED, Color.YELLOW)),
}


@cached(LRUCache(maxsize=16))
def compositions(total: int, parts: int) -> tuple[tuple[int, ...], ...]:
    """All ways to write `total` as `parts` non-negative integers, lexicographic."""
    if parts == 1:
        return ((total,),)
    return tuple((first, *rest) for first in range(total + 1) for rest in compositions(total - first, parts - 1))


def sample_task(partition: Partition, mode: Mode, rng: np.random.Generator, testing: bool = False) -> UrnTask:
    """Draw a task: a monochrome left urn and a uniformly composed right urn."""
    left_colors, right_colors = PARTITION_COLORS[(Partition(partition), testing)]
    left = UrnConfig.monochrome(left_colors[rng.integers(len(left_colors))])
    options = compositions(MARBLES_PER_URN, len(right_colors))
    counts = options[rng.integers(len(options))]
    right = UrnConfig.from_mapping(dict(zip(right_colors, counts)))
    return UrnTask(left=left, right=right, partition=Partition(partition), mode=Mode(mode))


def enumerate_triangle_configs(colors: tuple[Color, Color, Color]) -> list[UrnConfig]:
    """The 66 compositions of 10 marbles over three colors."""
    if len(colors) != 3 or len(set(colors)) != 3:
        raise ValueError(f"triangle needs exactly three distinct colors, got {colors}")
    configs = [UrnConfig.from_mapping(dict(zip(colors, c))) for c in compositions(MARBLES_PER_URN, 3)]
    assert len(configs) == TRIANGLE_CELLS
    return configs


def _one_hot_rows(config: UrnConfig) -> np.ndarray:
    indices = np.repeat(np.arange(len(URN_COLORS)), config.counts)
    return np.eye(len(URN_COLORS), dtype=np.float32)[indices]


def describe_urns(task: UrnTask, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One-hot marble matrices (10 x 5) of both urns with shuffled rows."""
    left = _one_hot_rows(task.left)[rng.permutation(MARBLES_PER_URN)]
    right = _one_hot_rows(task.right)[rng.permutation(MARBLES_PER_URN)]
    return left, right


def draw_marble(config: UrnConfig, rng: np.random.Generator) -> int:
    """Index into URN_COLORS of a marble drawn uniformly from the urn."""
    marbles = np.repeat(np.arange(len(URN_COLORS)), config.counts)
    return int(marbles[rng.integers(MARBLES_PER_URN)])


@dataclass(frozen=True)
class UrnObservation:
    described: tuple[np.ndarray, np.ndarray] | None
    drawn_marble: np.ndarray
    prev_action: np.ndarray
    prev_reward: float

    def vector(self) -> np.ndarray:
        """Network input: flattened description (if any) followed by the drawn marble."""
        parts = []
        if self.described is not None:
            parts.extend(m.ravel() for m in self.described)
        parts.append(self.drawn_marble)
        return np.concatenate(parts).astype(np.float32)


def one_hot_action(action: int | None, num_actions: int) -> np.ndarray:
    """Previous-action encoding with a trailing slot for "no previous action"."""
    vec = np.zeros(num_actions + 1, dtype=np.float32)
    vec[num_actions if action is None else action] = 1.0
    return vec


def step_urn(
    task: UrnTask,
    t: int,
    action: int,
    rng: np.random.Generator,
    palette: Palette,
    described: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[UrnObservation, float, bool]:
    """Draw one marble from the chosen urn."""
    if t >= task.horizon:
        raise ValueError(f"step {t} beyond horizon {task.horizon}")
    if action not in (UrnAction.LEFT, UrnAction.RIGHT):
        raise ValueError(f"action out of range: {action!r}")
    marble = draw_marble(task.urn(action), rng)
    return _outcome_observation(task, t, action, marble, palette, described)


def _outcome_observation(task, t, action, marble, palette, described):
    reward = palette.reward(URN_COLORS[marble])
    drawn = np.zeros(len(URN_COLORS), dtype=np.float32)
    drawn[marble] = 1.0
    obs = UrnObservation(
        described=described,
        drawn_marble=drawn,
        prev_action=one_hot_action(action, len(UrnAction)),
        prev_reward=reward,
    )
    return obs, reward, t + 1 == task.horizon


class UrnTaskEnv:
    """Urn task as a stateful environment.

    An outcome is the index of the drawn marble's color. Every call to
    `reset` samples a fresh task from the partition unless one is supplied.
    """

    num_actions = len(UrnAction)

    def __init__(
        self,
        partition: Partition,
        mode: Mode,
        palette: Palette,
        rng: np.random.Generator,
        testing: bool = False,
    ):
        self.partition = Partition(partition)
        self.mode = Mode(mode)
        self.palette = palette
        self.rng = rng
        self.testing = testing
        self.horizon = self.mode.horizon
        description_size = 2 * MARBLES_PER_URN * len(URN_COLORS) if self.mode is Mode.DESCRIBED else 0
        self.obs_shape = (description_size + len(URN_COLORS),)
        self.task: UrnTask | None = None
        self.t = 0
        self._described = None

    def reset(self, task: UrnTask | None = None) -> np.ndarray:
        self.task = task or sample_task(self.partition, self.mode, self.rng, self.testing)
        self.t = 0
        self._described = describe_urns(self.task, self.rng) if self.mode is Mode.DESCRIBED else None
        obs = UrnObservation(
            described=self._described,
            drawn_marble=np.zeros(len(URN_COLORS), dtype=np.float32),
            prev_action=one_hot_action(None, self.num_actions),
            prev_reward=0.0,
        )
        return obs.vector()

    def propose(self, action: int) -> int:
        if self.task is None:
            raise ValueError("environment must be reset before stepping")
        return draw_marble(self.task.urn(action), self.rng)

    def preview(self, action: int, outcome: int) -> tuple[np.ndarray, float, bool]:
        obs, reward, done = _outcome_observation(self.task, self.t, action, outcome, self.palette, self._described)
        return obs.vector(), reward, done

    def commit(self, action: int, outcome: int) -> tuple[np.ndarray, float, bool]:
        result = self.preview(action, outcome)
        self.t += 1
        return result

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.task is None:
            raise ValueError("environment must be reset before stepping")
        if self.t >= self.horizon:
            raise ValueError(f"step {self.t} beyond horizon {self.horizon}")
        return self.commit(action, self.propose(action))
