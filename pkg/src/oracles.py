"""Closed-form valuations and choices for the two-box illustrative example.

Each box is a lottery over marble payoffs. Payoffs may be unknown (the blue
marbles), in which case only agents holding a prior or a set of priors can
value the box. All functions are pure.
"""

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import Protocol, runtime_checkable

import numpy as np

from .constants import INDIFFERENCE_TOLERANCE, PROBABILITY_TOLERANCE

# Payoff of a blue marble under each model of the illustrative example
BLUE_PAYOFFS = (-1.0, 0.0, 1.0)

RISK_AVERSE_BETA = -1.0

PayoffFn = Callable[[float], float]


class Choice(StrEnum):
    LEFT = "left"
    RIGHT = "right"
    INDIFFERENT = "indifferent"
    UNDEFINED = "undefined"


class Agent(StrEnum):
    EXPECTED_UTILITY = "expected-utility"
    RISK_AVERSE = "risk-averse"
    BAYES_WITH_PRIOR = "bayes-optimal-with-prior"
    RISK_AVERSE_WITH_PRIOR = "risk-averse-with-prior"
    AMBIGUITY_AVERSE = "ambiguity-averse"


@dataclass(frozen=True)
class Lottery:
    """Finite outcome distribution; a payoff of None marks an unknown payoff."""

    outcomes: tuple[tuple[float, float | None], ...]

    def __post_init__(self):
        if not self.outcomes:
            raise ValueError("Lottery must have at least one outcome")
        probs = [p for p, _ in self.outcomes]
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise ValueError("Lottery probabilities must lie in [0, 1]")
        if abs(sum(probs) - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"Lottery probabilities sum to {sum(probs)!r}, expected 1")

    @classmethod
    def from_counts(cls, counts: Mapping[float | None, int]) -> "Lottery":
        """Build the single-draw lottery of a box holding `counts[payoff]` marbles."""
        total = sum(counts.values())
        if total <= 0:
            raise ValueError("box must hold at least one marble")
        return cls(tuple((n / total, payoff) for payoff, n in counts.items() if n > 0))

    @property
    def has_unknown(self) -> bool:
        return any(payoff is None for _, payoff in self.outcomes)

    def probabilities(self) -> np.ndarray:
        return np.array([p for p, _ in self.outcomes], dtype=np.float64)

    def payoffs(self, payoff: PayoffFn | None = None) -> np.ndarray:
        if self.has_unknown:
            raise ValueError("Lottery has unknown payoffs; resolve them with a model first")
        values = [r for _, r in self.outcomes]
        if payoff is not None:
            values = [payoff(r) for r in values]
        return np.array(values, dtype=np.float64)

    def resolve(self, unknown_payoff: float) -> "Lottery":
        """Substitute every unknown payoff with `unknown_payoff`."""
        return Lottery(tuple((p, unknown_payoff if r is None else r) for p, r in self.outcomes))


@dataclass(frozen=True)
class ModelClass:
    """One lottery per model θ for a single action."""

    models: tuple[Lottery, ...]

    def __post_init__(self):
        if not self.models:
            raise ValueError("ModelClass must hold at least one model")
        if any(m.has_unknown for m in self.models):
            raise ValueError("ModelClass lotteries must have known payoffs")

    @classmethod
    def from_box(cls, box: Lottery, unknown_payoffs: Sequence[float] = BLUE_PAYOFFS) -> "ModelClass":
        """Enumerate the models of a box, one per candidate unknown payoff."""
        return cls(tuple(box.resolve(b) for b in unknown_payoffs))


def _check_distribution(prior: np.ndarray, size: int) -> np.ndarray:
    prior = np.asarray(prior, dtype=np.float64)
    if prior.ndim != 1 or prior.shape[0] != size:
        raise ValueError(f"prior has dimension {prior.shape}, expected ({size},)")
    if np.any(prior < 0.0) or abs(prior.sum() - 1.0) > PROBABILITY_TOLERANCE:
        raise ValueError("prior must be a probability vector")
    return prior


@dataclass(frozen=True)
class AmbiguitySet:
    """A set of priors over model indices."""

    priors: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if not self.priors:
            raise ValueError("AmbiguitySet must hold at least one prior")
        sizes = {len(p) for p in self.priors}
        if len(sizes) != 1:
            raise ValueError("all priors in an AmbiguitySet must share one dimension")
        for prior in self.priors:
            _check_distribution(np.array(prior), len(prior))

    @classmethod
    def point_masses(cls, size: int) -> "AmbiguitySet":
        return cls(tuple(tuple(float(i == j) for j in range(size)) for i in range(size)))

    def with_prior(self, prior: Sequence[float]) -> "AmbiguitySet":
        return AmbiguitySet(self.priors + (tuple(float(p) for p in prior),))


def eu_value(lottery: Lottery, payoff: PayoffFn | None = None) -> float:
    return float(lottery.probabilities() @ lottery.payoffs(payoff))


def risk_value(lottery: Lottery, beta: float) -> float:
    """Mean plus `beta` times the population variance of the payoff."""
    probs = lottery.probabilities()
    values = lottery.payoffs()
    mean = probs @ values
    variance = probs @ (values - mean) ** 2 / probs.sum()
    return float(mean + beta * variance)


def bayes_value(prior: Sequence[float], mc: ModelClass, payoff: PayoffFn | None = None) -> float:
    prior = _check_distribution(np.asarray(prior), len(mc.models))
    return float(sum(w * eu_value(model, payoff) for w, model in zip(prior, mc.models)))


def ambiguity_value(delta: AmbiguitySet, mc: ModelClass, payoff: PayoffFn | None = None) -> float:
    """Worst Bayes value over the priors in `delta`."""
    if not delta.priors:
        raise ValueError("AmbiguitySet is empty")
    return min(bayes_value(prior, mc, payoff) for prior in delta.priors)


def mixture(prior: Sequence[float], mc: ModelClass) -> Lottery:
    """Predictive lottery obtained by marginalizing the prior over models."""
    prior = _check_distribution(np.asarray(prior), len(mc.models))
    mass: dict[float, float] = {}
    for w, model in zip(prior, mc.models):
        for p, r in model.outcomes:
            mass[r] = mass.get(r, 0.0) + w * p
    return Lottery(tuple((p, r) for r, p in mass.items() if p > 0.0))


def total_payoff_moments(
    counts: Mapping[float | None, int],
    unknown_prior: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
    unknown_payoffs: Sequence[float] = BLUE_PAYOFFS,
) -> tuple[float, float]:
    """Mean and variance of a box's summed payoff.

    Known marbles contribute a constant. Each unknown marble independently
    draws its payoff from `unknown_prior` over `unknown_payoffs`.
    """
    prior = _check_distribution(np.asarray(unknown_prior), len(unknown_payoffs))
    support = np.asarray(unknown_payoffs, dtype=np.float64)
    per_marble_mean = prior @ support
    per_marble_var = prior @ (support - per_marble_mean) ** 2

    mean, variance = 0.0, 0.0
    for payoff, n in counts.items():
        if payoff is None:
            mean += n * per_marble_mean
            variance += n * per_marble_var
        else:
            mean += n * payoff
    return float(mean), float(variance)


def compare(left: float, right: float) -> Choice:
    if abs(left - right) <= INDIFFERENCE_TOLERANCE:
        return Choice.INDIFFERENT
    return Choice.LEFT if left > right else Choice.RIGHT


@dataclass(frozen=True)
class BoxPair:
    left: Lottery
    right: Lottery


# Box contents as payoff -> marble count; None is a blue marble
FIGURE_CASES: dict[str, BoxPair] = {
    "a": BoxPair(Lottery.from_counts({1.0: 3, -1.0: 7}), Lottery.from_counts({1.0: 7, -1.0: 3})),
    "b": BoxPair(Lottery.from_counts({0.0: 10}), Lottery.from_counts({1.0: 5, -1.0: 5})),
    "c": BoxPair(Lottery.from_counts({0.0: 10}), Lottery.from_counts({None: 10})),
    "d": BoxPair(Lottery.from_counts({0.0: 10}), Lottery.from_counts({1.0: 2, -1.0: 2, None: 6})),
}

UNIFORM_BLUE_PRIOR = (1 / 3, 1 / 3, 1 / 3)


def choose(agent: Agent, boxes: BoxPair) -> Choice:
    """Choice of one agent between two boxes."""
    ambiguous = boxes.left.has_unknown or boxes.right.has_unknown
    match agent:
        case Agent.EXPECTED_UTILITY:
            if ambiguous:
                return Choice.UNDEFINED
            return compare(eu_value(boxes.left), eu_value(boxes.right))
        case Agent.RISK_AVERSE:
            if ambiguous:
                return Choice.UNDEFINED
            return compare(risk_value(boxes.left, RISK_AVERSE_BETA), risk_value(boxes.right, RISK_AVERSE_BETA))

    left_mc, right_mc = ModelClass.from_box(boxes.left), ModelClass.from_box(boxes.right)
    match agent:
        case Agent.BAYES_WITH_PRIOR:
            return compare(bayes_value(UNIFORM_BLUE_PRIOR, left_mc), bayes_value(UNIFORM_BLUE_PRIOR, right_mc))
        case Agent.RISK_AVERSE_WITH_PRIOR:
            return compare(
                risk_value(mixture(UNIFORM_BLUE_PRIOR, left_mc), RISK_AVERSE_BETA),
                risk_value(mixture(UNIFORM_BLUE_PRIOR, right_mc), RISK_AVERSE_BETA),
            )
        case Agent.AMBIGUITY_AVERSE:
            delta = AmbiguitySet.point_masses(len(BLUE_PAYOFFS))
            return compare(ambiguity_value(delta, left_mc), ambiguity_value(delta, right_mc))
    raise ValueError(f"unknown agent: {agent!r}")


def table1_choices() -> list[list[Choice]]:
    """Choices of every agent (rows, `Agent` order) on every case (columns, a-d)."""
    return [[choose(agent, boxes) for boxes in FIGURE_CASES.values()] for agent in Agent]


def table1_rows() -> list[dict]:
    return [
        {"agent": agent.value, "case": case, "choice": choice.value}
        for agent, row in zip(Agent, table1_choices())
        for case, choice in zip(FIGURE_CASES, row)
    ]


# Ambiguous urn: model θ holds θ red and 10 - θ green marbles
ELLSBERG_MODELS = 11


def _ellsberg_urns(green: float, red: float) -> tuple[ModelClass, ModelClass]:
    known = ModelClass((Lottery.from_counts({green: 5, red: 5}),))
    ambiguous = ModelClass(
        tuple(Lottery.from_counts({red: n_red, green: 10 - n_red}) for n_red in range(ELLSBERG_MODELS))
    )
    return known, ambiguous


def ellsberg_switch_test(delta: AmbiguitySet) -> tuple[Choice, Choice]:
    """Ambiguity-averse preference before and after swapping green/red rewards.

    Left is the known 5/5 urn, right is the urn of unknown composition.
    """
    if not delta.priors:
        raise ValueError("AmbiguitySet is empty")
    choices = []
    for green, red in ((1.0, -1.0), (-1.0, 1.0)):
        known, ambiguous = _ellsberg_urns(green, red)
        known_value = eu_value(known.models[0])
        choices.append(compare(known_value, ambiguity_value(delta, ambiguous)))
    return choices[0], choices[1]


@runtime_checkable
class DefaultPolicyRule(Protocol):
    """Fall-back choice rule f(|Δ|) for agents facing an ambiguity set.

    Extension point only; no rule ships with the toolkit.
    """

    def __call__(self, delta: AmbiguitySet, left: ModelClass, right: ModelClass) -> Choice: ...
