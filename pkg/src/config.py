"""Configuration: process settings from the environment and per-run training configs."""

import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import dotenv_values, load_dotenv

logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()

# Server port (loaded from .env)
PORT = int(os.getenv("PORT", "8000"))

# Directory of emitted reports served over HTTP
# Resolve relative paths against the project root (parent of src/)
_reports_dir_value = os.getenv("REPORTS_DIR", "reports").strip("'\"")
_reports_dir_path = Path(_reports_dir_value)
if not _reports_dir_path.is_absolute():
    _reports_dir_path = Path(__file__).parent.parent / _reports_dir_path
REPORTS_DIR = _reports_dir_path
logger.debug(f"REPORTS_DIR: {REPORTS_DIR}")

# Cache loaded reports for this many minutes
REPORT_CACHE_MINUTES = int(os.getenv("REPORT_CACHE_MINUTES", "1"))

# Default number of actor threads in asynchronous training
NUM_ACTORS = int(os.getenv("NUM_ACTORS", "4"))

ENVIRONMENTS = ("urn", "grid")
PROBABILITY_MODES = ("described", "experiential")
PARTITIONS = ("risky", "amb_seen", "amb_novel")
AGGREGATORS = ("moments", "identity")

_TRUE_VALUES = {"1", "true", "yes", "on"}
_FALSE_VALUES = {"0", "false", "no", "off"}


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in _TRUE_VALUES:
        return True
    if value in _FALSE_VALUES:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_PARSERS = {int: int, float: float, bool: _parse_bool, str: str.strip}


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters and task settings of one training run.

    Defaults are desk-scale; `paper_scale()` switches to full scale
    (widths 128, 1M learner steps, 20 ensemble members).
    """

    discount: float = 0.95
    batch_size: int = 128
    max_learner_steps: int = 50_000
    replay_capacity: int = 100_000
    min_replay: int = 500
    learning_rate: float = 1e-4
    max_grad_norm: float = 1.0
    replay_period: int = 40
    target_update_period: int = 400
    n_step: int = 5
    sequence_length: int = 20
    burn_in: int = 0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.2
    beta: float = 0.0
    num_proposals: int = 10
    width: int = 64
    ensemble_size: int = 8
    num_actors: int = NUM_ACTORS
    deterministic: bool = False
    env: str = "urn"
    probabilities: str = "described"
    partition: str = "risky"
    blue_reward: float = -1.0
    yellow_reward: float = 0.0
    gray_reward: float = 0.0
    aggregator: str = "moments"
    meta_prev_inputs: bool = True
    log_interval: int = 500

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        for name in (
            "batch_size",
            "max_learner_steps",
            "replay_capacity",
            "replay_period",
            "target_update_period",
            "n_step",
            "sequence_length",
            "num_proposals",
            "width",
            "ensemble_size",
            "num_actors",
            "log_interval",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.min_replay < 0 or self.burn_in != 0:
            raise ValueError("min_replay must be non-negative and burn_in must be 0")
        if self.learning_rate <= 0 or self.max_grad_norm <= 0:
            raise ValueError("learning_rate and max_grad_norm must be positive")
        if not 0.0 <= self.epsilon_decay_fraction <= 1.0:
            raise ValueError("epsilon_decay_fraction must lie in [0, 1]")
        if self.env not in ENVIRONMENTS:
            raise ValueError(f"env must be one of {ENVIRONMENTS}, got {self.env!r}")
        if self.probabilities not in PROBABILITY_MODES:
            raise ValueError(f"probabilities must be one of {PROBABILITY_MODES}, got {self.probabilities!r}")
        if self.partition not in PARTITIONS:
            raise ValueError(f"partition must be one of {PARTITIONS}, got {self.partition!r}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")

    def replace(self, **overrides) -> "TrainConfig":
        return dataclasses.replace(self, **overrides)

    def paper_scale(self) -> "TrainConfig":
        """Return a copy with full-scale widths, steps and ensemble size."""
        return self.replace(width=128, max_learner_steps=1_000_000, ensemble_size=20)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        """Load a key-value run config (`KEY=value` lines, `#` comments).

        Keys are upper-cased field names; omitted keys keep their defaults.
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")

        fields = {f.name: f for f in dataclasses.fields(cls)}
        overrides = {}
        for key, raw in dotenv_values(path).items():
            name = key.lower()
            if name not in fields:
                raise ValueError(f"unknown config key: {key}")
            if raw is None:
                raise ValueError(f"config key {key} has no value")
            parser = _PARSERS[fields[name].type]
            try:
                overrides[name] = parser(raw)
            except ValueError as e:
                raise ValueError(f"invalid value for {key}: {raw!r}") from e

        logger.info(f"Loaded {len(overrides)} config overrides from {path}")
        return cls(**overrides)
