"""Marble-collecting gridworld with an egocentric one-hot view."""

import copy
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .constants import GRID_HORIZON, GRID_MARBLES, GRID_ROOM_SIZE, GRID_VIEW_SIZE
from .urns import Color, Palette, Partition

logger = logging.getLogger(__name__)

GRID_SIZE = GRID_ROOM_SIZE + 2


class Tile(IntEnum):
    FLOOR = 0
    WALL = 1
    AGENT = 2
    GREEN = 3
    RED = 4
    BLUE = 5
    GRAY = 6


MARBLE_TILES = {Color.GREEN: Tile.GREEN, Color.RED: Tile.RED, Color.BLUE: Tile.BLUE, Color.GRAY: Tile.GRAY}

PARTITION_MARBLES = {
    Partition.RISKY: (Color.GREEN, Color.RED),
    Partition.AMB_SEEN: (Color.GREEN, Color.RED, Color.BLUE),
    Partition.AMB_NOVEL: (Color.GREEN, Color.RED, Color.GRAY),
}


class GridAction(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


_MOVES = {
    GridAction.UP: (-1, 0),
    GridAction.DOWN: (1, 0),
    GridAction.LEFT: (0, -1),
    GridAction.RIGHT: (0, 1),
}


def _room_layout() -> np.ndarray:
    layout = np.full((GRID_SIZE, GRID_SIZE), Tile.WALL, dtype=np.int8)
    layout[1:-1, 1:-1] = Tile.FLOOR
    return layout


ROOM = _room_layout()
FREE_TILES = [tuple(int(i) for i in pos) for pos in np.argwhere(ROOM == Tile.FLOOR)]


@dataclass
class GridState:
    marbles: dict[tuple[int, int], Color]
    agent: tuple[int, int]
    t: int = 0
    horizon: int = GRID_HORIZON
    initial_counts: Counter = field(default_factory=Counter)
    pickups: Counter = field(default_factory=Counter)

    @property
    def marbles_remaining(self) -> int:
        return len(self.marbles)

    def pickup_fractions(self) -> dict[Color, float | None]:
        """Fraction of each color's marbles picked up; None if the color never appeared."""
        return {
            color: (self.pickups[color] / n if (n := self.initial_counts[color]) else None)
            for color in MARBLE_TILES
        }


def observe(state: GridState) -> np.ndarray:
    """Egocentric (tile types, 5, 5) one-hot view centered on the agent."""
    tiles = ROOM.copy()
    for (r, c), color in state.marbles.items():
        tiles[r, c] = MARBLE_TILES[color]
    tiles[state.agent] = Tile.AGENT

    half = GRID_VIEW_SIZE // 2
    padded = np.pad(tiles, half, constant_values=Tile.WALL)
    r, c = state.agent
    window = padded[r : r + GRID_VIEW_SIZE, c : c + GRID_VIEW_SIZE]
    return np.eye(len(Tile), dtype=np.float32)[window].transpose(2, 0, 1)


def reset_grid(
    rng: np.random.Generator,
    partition: Partition = Partition.RISKY,
    num_marbles: int = GRID_MARBLES,
) -> tuple[GridState, np.ndarray]:
    """Scatter marbles of equally likely colors over distinct free tiles and place the agent."""
    colors = PARTITION_MARBLES[Partition(partition)]
    order = rng.permutation(len(FREE_TILES))
    marble_tiles = [FREE_TILES[i] for i in order[:num_marbles]]
    agent_tile = FREE_TILES[order[num_marbles]]
    marbles = {pos: colors[rng.integers(len(colors))] for pos in marble_tiles}
    state = GridState(marbles=marbles, agent=agent_tile, initial_counts=Counter(marbles.values()))
    return state, observe(state)


def step_grid(state: GridState, action: int, palette: Palette) -> tuple[np.ndarray, float, bool, Color | None]:
    """Move one tile (walls block) and pick up any marble on the destination."""
    dr, dc = _MOVES[GridAction(action)]
    target = (state.agent[0] + dr, state.agent[1] + dc)
    if ROOM[target] != Tile.WALL:
        state.agent = target

    reward, pickup = 0.0, None
    if state.agent in state.marbles:
        pickup = state.marbles.pop(state.agent)
        state.pickups[pickup] += 1
        reward = palette.reward(pickup)

    state.t += 1
    return observe(state), reward, state.t >= state.horizon, pickup


class GridTaskEnv:
    """Gridworld environment. Transitions are deterministic, so outcomes carry no information."""

    num_actions = len(GridAction)
    obs_shape = (len(Tile), GRID_VIEW_SIZE, GRID_VIEW_SIZE)
    horizon = GRID_HORIZON

    def __init__(
        self,
        partition: Partition,
        palette: Palette,
        rng: np.random.Generator,
        num_marbles: int = GRID_MARBLES,
    ):
        self.partition = Partition(partition)
        self.palette = palette
        self.rng = rng
        self.num_marbles = num_marbles
        self.state: GridState | None = None

    def reset(self) -> np.ndarray:
        self.state, obs = reset_grid(self.rng, self.partition, self.num_marbles)
        return obs

    def propose(self, action: int) -> None:
        return None

    def preview(self, action: int, outcome: None) -> tuple[np.ndarray, float, bool]:
        obs, reward, done, _ = step_grid(copy.deepcopy(self.state), action, self.palette)
        return obs, reward, done

    def commit(self, action: int, outcome: None) -> tuple[np.ndarray, float, bool]:
        obs, reward, done, _ = step_grid(self.state, action, self.palette)
        return obs, reward, done

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        return self.commit(action, self.propose(action))
