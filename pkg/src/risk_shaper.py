"""Value-weighted resampling of next states, and tabular risk-sensitive Bellman oracles.

Experience is shaped by drawing N candidate outcomes from the true dynamics
and resampling one of them with weight proportional to its multiplicity
times exp(beta * value). Positive beta anticipates favorable outcomes,
negative beta adversarial ones. The tabular half of the module solves the
free-energy Bellman equation exactly on small MDPs.
"""

import json
import logging
from collections.abc import Hashable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.special import logsumexp

from .constants import PROXY_TOLERANCE

logger = logging.getLogger(__name__)

TINY_WEIGHT = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class ProposalBatch:
    candidates: tuple[Hashable, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.candidates) == 0:
            raise ValueError("ProposalBatch is empty")
        if len(self.candidates) != len(self.values):
            raise ValueError(f"{len(self.candidates)} candidates but {len(self.values)} values")

    @classmethod
    def of(cls, candidates: Sequence[Hashable], values: Sequence[float]) -> "ProposalBatch":
        return cls(tuple(candidates), np.asarray(values, dtype=np.float64))


@dataclass(frozen=True)
class ProxyDistribution:
    """Distribution over the unique candidates, in order of first appearance. Every weight is positive."""

    support: tuple[Hashable, ...]
    weights: np.ndarray

    def __post_init__(self):
        if len(self.support) != len(self.weights):
            raise ValueError("support and weights differ in length")
        if np.any(self.weights <= 0.0) or abs(self.weights.sum() - 1.0) > PROXY_TOLERANCE:
            raise ValueError("proxy weights must be positive and sum to 1")

    def probability(self, candidate: Hashable) -> float:
        return float(self.weights[self.support.index(candidate)]) if candidate in self.support else 0.0


def mechanism1_select(batch: ProposalBatch, mode: Literal["seek", "avert"] = "seek") -> Hashable:
    """Highest (seek) or lowest (avert) valued candidate; ties go to the lowest index."""
    if mode == "seek":
        return batch.candidates[int(np.argmax(batch.values))]
    if mode == "avert":
        return batch.candidates[int(np.argmin(batch.values))]
    raise ValueError(f"mode must be 'seek' or 'avert', got {mode!r}")


def _floor(weights: np.ndarray) -> np.ndarray:
    floored = np.maximum(weights, TINY_WEIGHT)
    return floored / floored.sum()


def proxy_weights(batch: ProposalBatch, beta: float) -> ProxyDistribution:
    """Weights proportional to multiplicity times exp(beta * V).

    Infinite beta keeps only the best (or worst) candidates. Weights that
    underflow, or that infinite beta drops, are floored at the smallest
    positive float.
    """
    if not np.all(np.isfinite(batch.values)):
        raise ValueError("candidate values must be finite")

    support: list[Hashable] = []
    multiplicity: list[int] = []
    values: list[float] = []
    index: dict[Hashable, int] = {}
    for candidate, value in zip(batch.candidates, batch.values):
        if candidate in index:
            multiplicity[index[candidate]] += 1
            continue
        index[candidate] = len(support)
        support.append(candidate)
        multiplicity.append(1)
        values.append(float(value))

    counts = np.asarray(multiplicity, dtype=np.float64)
    v = np.asarray(values)
    if np.isinf(beta):
        best = v == (v.max() if beta > 0 else v.min())
        weights = np.where(best, counts, 0.0) / counts[best].sum()
        return ProxyDistribution(tuple(support), _floor(weights))

    logits = np.log(counts) + beta * v
    weights = np.exp(logits - logits.max())
    return ProxyDistribution(tuple(support), _floor(weights / weights.sum()))


def sample_shaped(pd: ProxyDistribution, rng: np.random.Generator) -> Hashable:
    return pd.support[rng.choice(len(pd.support), p=pd.weights)]


def exact_rho(t_row: Sequence[float], values: Sequence[float], beta: float) -> np.ndarray:
    """The dynamics tilted by exp(beta * V), renormalized over the full support."""
    t_row = np.asarray(t_row, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if np.any(t_row < 0.0) or abs(t_row.sum() - 1.0) > PROXY_TOLERANCE:
        raise ValueError("transition row must be a probability vector")
    if t_row.shape != values.shape:
        raise ValueError(f"transition row {t_row.shape} and values {values.shape} differ in shape")
    with np.errstate(divide="ignore"):
        logits = np.where(t_row > 0.0, np.log(t_row) + beta * values, -np.inf)
    if not np.any(np.isfinite(logits)):
        raise ValueError("degenerate normalizer: no successor has positive weight")
    weights = np.exp(logits - logits.max())
    return weights / weights.sum()


def single_step_q_hat(probs: Sequence[float], values: Sequence[float], beta: float) -> float:
    """Expected value of V under the tilted single-step dynamics."""
    return float(exact_rho(probs, values, beta) @ np.asarray(values, dtype=np.float64))


def free_energy(probs: Sequence[float], values: Sequence[float], beta: float) -> float:
    """Certainty equivalent (1/beta) log E[exp(beta V)]; the mean at beta = 0."""
    probs = np.asarray(probs, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if beta == 0.0:
        return float(probs @ values)
    mask = probs > 0.0
    return float(logsumexp(beta * values[mask], b=probs[mask]) / beta)


def qf_vs_qrho_check(
    probs: Sequence[float], values: Sequence[float], beta: float, h: float = 1e-4
) -> tuple[float, float, float]:
    """Compare the free-energy value with the tilted expectation.

    The tilted expectation equals d/dbeta log Z, so it should match
    Q_F + beta * dQ_F/dbeta; the derivative is taken by central differences.
    Returns (Q_F, Q_rho, gap).
    """
    if beta == 0.0:
        mean = free_energy(probs, values, 0.0)
        return mean, mean, 0.0
    q_f = free_energy(probs, values, beta)
    q_rho = single_step_q_hat(probs, values, beta)
    derivative = (free_energy(probs, values, beta + h) - free_energy(probs, values, beta - h)) / (2 * h)
    return q_f, q_rho, abs(q_rho - (q_f + beta * derivative))


@dataclass(frozen=True)
class RiskMDP:
    """Tabular MDP with transitions T[s, a, s'] and rewards r[s, a]."""

    transitions: np.ndarray
    rewards: np.ndarray
    discount: float
    beta: float

    def __post_init__(self):
        t, r = self.transitions, self.rewards
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise ValueError(f"transitions must have shape (S, A, S), got {t.shape}")
        if r.shape != t.shape[:2]:
            raise ValueError(f"rewards must have shape {t.shape[:2]}, got {r.shape}")
        if np.any(t < 0.0) or not np.allclose(t.sum(axis=-1), 1.0, atol=1e-12):
            raise ValueError("transition rows must be normalized")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    def with_beta(self, beta: float) -> "RiskMDP":
        return RiskMDP(self.transitions, self.rewards, self.discount, beta)

    @classmethod
    def random(
        cls,
        num_states: int,
        num_actions: int,
        rng: np.random.Generator,
        discount: float = 0.9,
        beta: float = 1.0,
    ) -> "RiskMDP":
        transitions = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
        rewards = rng.uniform(-1.0, 1.0, size=(num_states, num_actions))
        return cls(transitions, rewards, discount, beta)

    @classmethod
    def from_dict(cls, data: dict, beta: float | None = None) -> "RiskMDP":
        return cls(
            transitions=np.asarray(data["transitions"], dtype=np.float64),
            rewards=np.asarray(data["rewards"], dtype=np.float64),
            discount=float(data.get("discount", 0.95)),
            beta=float(data.get("beta", 0.0) if beta is None else beta),
        )

    @classmethod
    def load(cls, path: str | Path, beta: float | None = None) -> "RiskMDP":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"MDP file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()), beta)


def _tilted_log_weights(mdp: RiskMDP, values: np.ndarray) -> np.ndarray:
    exponent = mdp.beta * mdp.discount * values
    return np.where(mdp.transitions > 0.0, exponent[None, None, :], -np.inf)


def risk_bellman_backup(
    mdp: RiskMDP, values: np.ndarray, policy: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Free-energy backup; returns (V', Q').

    V' is the policy average of Q' when `policy[s, a]` is given, else the max.
    """
    values = np.asarray(values, dtype=np.float64)
    if mdp.beta == 0.0:
        q = mdp.rewards + mdp.discount * mdp.transitions @ values
    else:
        q = mdp.rewards + logsumexp(_tilted_log_weights(mdp, values), b=mdp.transitions, axis=-1) / mdp.beta
    if policy is None:
        return q.max(axis=1), q
    return (policy * q).sum(axis=1), q


def psi_star(mdp: RiskMDP, values: np.ndarray) -> np.ndarray:
    """Transitions exponentially tilted by beta * gamma * V, rows normalized."""
    with np.errstate(divide="ignore"):
        logits = np.log(mdp.transitions) + _tilted_log_weights(mdp, np.asarray(values, dtype=np.float64))
    weights = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return weights / weights.sum(axis=-1, keepdims=True)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    policy = np.zeros_like(q)
    policy[np.arange(q.shape[0]), q.argmax(axis=1)] = 1.0
    return policy


def regularized_policy_value(mdp: RiskMDP, psi: np.ndarray, policy: np.ndarray) -> np.ndarray:
    """Exact value of following `policy` when nature plays `psi`, penalized by KL(psi || T) / beta."""
    if mdp.beta == 0.0:
        raise ValueError("the KL-regularized objective needs beta != 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(psi > 0.0, np.log(psi) - np.log(mdp.transitions), 0.0)
    kl = (psi * log_ratio).sum(axis=-1)
    reward = (policy * (mdp.rewards - kl / mdp.beta)).sum(axis=1)
    transition = np.einsum("sa,sat->st", policy, psi)
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * transition, reward)


@dataclass(frozen=True)
class TabularSolution:
    values: np.ndarray
    q_values: np.ndarray
    psi: np.ndarray
    policy: np.ndarray
    iterations: int

    def to_dict(self) -> dict:
        return {
            "values": self.values.tolist(),
            "q_values": self.q_values.tolist(),
            "psi_star": self.psi.tolist(),
            "policy": self.policy.argmax(axis=1).tolist(),
            "iterations": self.iterations,
        }


def solve_tabular(
    mdp: RiskMDP,
    policy: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iterations: int = 100_000,
) -> TabularSolution:
    """Value iteration with the free-energy backup until the sup-norm change is below `tol`."""
    values = np.zeros(mdp.num_states)
    for iteration in range(1, max_iterations + 1):
        new_values, q = risk_bellman_backup(mdp, values, policy)
        delta = np.max(np.abs(new_values - values))
        values = new_values
        if delta < tol:
            break
    else:
        logger.warning(f"Value iteration stopped after {max_iterations} iterations (delta {delta:.3g})")

    _, q = risk_bellman_backup(mdp, values, policy)
    logger.debug(f"Value iteration converged in {iteration} iterations (beta={mdp.beta})")
    return TabularSolution(
        values=values,
        q_values=q,
        psi=psi_star(mdp, values),
        policy=greedy_policy(q) if policy is None else policy,
        iterations=iteration,
    )
