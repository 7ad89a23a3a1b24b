"""Recurrent Q-learning with sequence replay, n-step double-Q targets and optional risk shaping.

Actors run episodes with an epsilon-greedy policy over the current parameter
snapshot and push fixed-length sequences into the replay buffer. The learner
samples batches, unrolls the network from the stored memory and takes one
clipped Adam step per `replay_period` actor steps. With `deterministic` set,
actor and learner alternate in one thread so equal seeds give equal runs.
"""

import json
import logging
import threading
from collections.abc import Callable, Hashable
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Protocol

import numpy as np

from .config import TrainConfig
from .gridworld import GridTaskEnv
from .network import (
    AdamOptimizer,
    MemoryState,
    NetParams,
    NetSpec,
    backward,
    forward,
    init_params,
    save_checkpoint,
    sgd_step,
    unroll,
    unroll_with_cache,
)
from .replay import ReplayBuffer, SequenceBatch, TransitionSequence
from .risk_shaper import ProposalBatch, proxy_weights, sample_shaped
from .urns import Palette, Partition, UrnTaskEnv, one_hot_action

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
METRICS_NAME = "metrics.jsonl"
CONFIG_NAME = "config.json"


class Environment(Protocol):
    """Episodic environment whose next outcome can be proposed and previewed before committing."""

    num_actions: int
    obs_shape: tuple[int, ...]
    horizon: int

    def reset(self) -> np.ndarray: ...

    def propose(self, action: int) -> Hashable: ...

    def preview(self, action: int, outcome: Hashable) -> tuple[np.ndarray, float, bool]: ...

    def commit(self, action: int, outcome: Hashable) -> tuple[np.ndarray, float, bool]: ...


def make_environment(
    cfg: TrainConfig,
    rng: np.random.Generator,
    partition: Partition | None = None,
    testing: bool = False,
) -> Environment:
    partition = Partition(partition or cfg.partition)
    if cfg.env == "grid":
        return GridTaskEnv(partition, Palette.from_config(cfg), rng)
    return UrnTaskEnv(partition, cfg.probabilities, Palette.from_config(cfg), rng, testing=testing)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay from `start` to `end` over `decay_steps` actor steps."""

    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 0

    def __call__(self, step: int) -> float:
        if self.decay_steps <= 0:
            return self.end
        fraction = min(step / self.decay_steps, 1.0)
        return self.start + fraction * (self.end - self.start)


@dataclass(frozen=True)
class ShaperConfig:
    beta: float
    num_proposals: int = 10


@dataclass
class Episode:
    sequences: list[TransitionSequence]
    episode_return: float
    steps: int
    actions: list[int]
    proposals: list[tuple[ProposalBatch, Hashable]] = field(default_factory=list)


def greedy_action(q: np.ndarray) -> int:
    return int(np.argmax(q))


def shape_outcome(
    env: Environment,
    params: NetParams,
    action: int,
    next_memory: MemoryState,
    shaper: ShaperConfig,
    discount: float,
    rng: np.random.Generator,
) -> tuple[Hashable, ProposalBatch]:
    """Propose N outcomes, value each under the fixed history context and resample one.

    A candidate is worth its reward plus the discounted greedy Q-value of the
    observation it leads to, evaluated with the post-step memory and the
    action just taken.
    """
    candidates = [env.propose(action) for _ in range(shaper.num_proposals)]
    unique = list(dict.fromkeys(candidates))
    previews = [env.preview(action, outcome) for outcome in unique]
    obs = np.stack([p[0] for p in previews])
    rewards = np.array([p[1] for p in previews], dtype=np.float64)
    dones = np.array([p[2] for p in previews], dtype=bool)

    n = len(unique)
    prev_actions = np.repeat(one_hot_action(action, env.num_actions)[None], n, axis=0)
    q_next, _ = forward(params, obs, prev_actions, rewards, next_memory.repeat(n))
    unique_values = rewards + discount * np.where(dones, 0.0, q_next.max(axis=-1))

    lookup = {outcome: value for outcome, value in zip(unique, unique_values)}
    batch = ProposalBatch.of(candidates, [lookup[c] for c in candidates])
    return sample_shaped(proxy_weights(batch, shaper.beta), rng), batch


def _pad(values: list, size: int, dtype) -> np.ndarray:
    array = np.asarray(values, dtype=dtype)
    if len(array) == size:
        return array
    padded = np.zeros((size, *array.shape[1:]), dtype=dtype)
    padded[: len(array)] = array
    return padded


def collect_episode(
    env: Environment,
    params: NetParams,
    rng: np.random.Generator,
    epsilon: float = 0.0,
    shaper: ShaperConfig | None = None,
    discount: float = 0.95,
    sequence_length: int = 20,
    record_proposals: bool = False,
) -> Episode:
    """Run one epsilon-greedy episode from zero memory, optionally with shaped outcomes."""
    num_actions = env.num_actions
    obs = env.reset()
    memory = MemoryState.zeros(params.spec.recurrent_width, dtype=params.dtype)
    prev_action = one_hot_action(None, num_actions)
    prev_reward = 0.0

    observations, prev_actions, prev_rewards, memories = [obs], [prev_action], [prev_reward], [memory]
    actions, rewards, dones = [], [], []
    proposals = []
    done = False
    while not done:
        q, next_memory = forward(params, obs, prev_action, prev_reward, memory)
        explore = rng.random() < epsilon
        action = int(rng.integers(num_actions)) if explore else greedy_action(q)

        if shaper is None:
            outcome = env.propose(action)
        else:
            outcome, batch = shape_outcome(env, params, action, next_memory, shaper, discount, rng)
            if record_proposals:
                proposals.append((batch, outcome))
        obs, reward, done = env.commit(action, outcome)

        actions.append(action)
        rewards.append(reward)
        dones.append(done)
        prev_action = one_hot_action(action, num_actions)
        prev_reward = reward
        memory = next_memory
        observations.append(obs)
        prev_actions.append(prev_action)
        prev_rewards.append(prev_reward)
        memories.append(memory)

    steps = len(actions)
    sequences = []
    for start in range(0, steps, sequence_length):
        end = min(start + sequence_length, steps)
        sequences.append(
            TransitionSequence(
                obs=_pad(observations[start : end + 1], sequence_length + 1, np.float32),
                prev_actions=_pad(prev_actions[start : end + 1], sequence_length + 1, np.float32),
                prev_rewards=_pad(prev_rewards[start : end + 1], sequence_length + 1, np.float32),
                actions=_pad(actions[start:end], sequence_length, np.int64),
                rewards=_pad(rewards[start:end], sequence_length, np.float32),
                dones=_pad(dones[start:end], sequence_length, bool),
                mask=_pad([1.0] * (end - start), sequence_length, np.float32),
                memory=memories[start],
            )
        )
    return Episode(sequences, float(sum(rewards)), steps, actions, proposals)


def n_step_returns(
    rewards: np.ndarray,
    dones: np.ndarray,
    mask: np.ndarray,
    bootstrap: np.ndarray,
    gamma: float,
    n: int,
) -> np.ndarray:
    """n-step targets for every step of a (L, B) batch.

    `bootstrap[k]` is the value of the input at index k (L + 1 entries).
    Accumulation stops at a terminal step (no bootstrap) or at the end of
    the valid steps (bootstrap from the following input).
    """
    length, batch = rewards.shape
    columns = np.arange(batch)
    targets = np.zeros((length, batch), dtype=np.float64)
    for t in range(length):
        ret = np.zeros(batch)
        disc = np.ones(batch)
        alive = mask[t] > 0
        end = np.full(batch, t)
        for k in range(t, min(t + n, length)):
            step = alive & (mask[k] > 0)
            ret += np.where(step, disc * rewards[k], 0.0)
            end = np.where(step, k + 1, end)
            disc = np.where(step, disc * gamma, disc)
            terminal = step & dones[k].astype(bool)
            disc = np.where(terminal, 0.0, disc)
            alive = step & ~terminal
        targets[t] = ret + disc * bootstrap[end, columns]
    return targets


def _double_q_bootstrap(q_online: np.ndarray, q_target: np.ndarray) -> np.ndarray:
    best = q_online.argmax(axis=-1)
    return np.take_along_axis(q_target, best[..., None], axis=-1)[..., 0]


def n_step_targets(
    batch: SequenceBatch, online_params: NetParams, target_params: NetParams, gamma: float, n: int
) -> np.ndarray:
    """Double-Q n-step targets: the online network picks the bootstrap action, the target network values it."""
    q_online, _ = unroll(online_params, batch.obs, batch.prev_actions, batch.prev_rewards, batch.memory)
    q_target, _ = unroll(target_params, batch.obs, batch.prev_actions, batch.prev_rewards, batch.memory)
    bootstrap = _double_q_bootstrap(q_online, q_target)
    return n_step_returns(batch.rewards, batch.dones, batch.mask, bootstrap, gamma, n)


@dataclass
class LearnerState:
    params: NetParams
    target_params: NetParams
    optimizer: AdamOptimizer
    steps: int = 0

    @classmethod
    def create(cls, params: NetParams, learning_rate: float) -> "LearnerState":
        return cls(
            params=params,
            target_params=params.copy(),
            optimizer=AdamOptimizer(params.spec.num_params, lr=learning_rate, dtype=params.dtype),
        )


def learner_step(
    buffer: ReplayBuffer, state: LearnerState, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[NetParams, float]:
    """One mean-squared TD update on a sampled batch; syncs the target network on schedule."""
    batch = SequenceBatch.collate(buffer.sample(cfg.batch_size, rng))
    q, _, cache = unroll_with_cache(state.params, batch.obs, batch.prev_actions, batch.prev_rewards, batch.memory)
    q_target, _ = unroll(state.target_params, batch.obs, batch.prev_actions, batch.prev_rewards, batch.memory)
    targets = n_step_returns(
        batch.rewards, batch.dones, batch.mask, _double_q_bootstrap(q, q_target), cfg.discount, cfg.n_step
    )

    length = batch.actions.shape[0]
    chosen = np.take_along_axis(q[:length], batch.actions[..., None], axis=-1)[..., 0]
    denom = max(float(batch.mask.sum()), 1.0)
    td = (chosen - targets) * batch.mask
    loss = float(np.sum(td**2) / denom)

    dq = np.zeros_like(q)
    np.put_along_axis(dq[:length], batch.actions[..., None], (2.0 * td / denom)[..., None], axis=-1)
    grads = backward(state.params, cache, dq)
    state.params = sgd_step(state.params, grads, state.optimizer, cfg.max_grad_norm)
    state.steps += 1
    if state.steps % cfg.target_update_period == 0:
        state.target_params = state.params.copy()
    return state.params, loss


class ParameterStore:
    """Latest parameter snapshot shared with actor threads."""

    def __init__(self, params: NetParams):
        self._lock = threading.Lock()
        self._params = params.frozen()

    def publish(self, params: NetParams) -> None:
        snapshot = params.frozen()
        with self._lock:
            self._params = snapshot

    def snapshot(self) -> NetParams:
        with self._lock:
            return self._params


class _Progress:
    def __init__(self):
        self.cond = threading.Condition()
        self.actor_steps = 0
        self.episodes = 0
        self._returns: list[float] = []
        self._losses: list[float] = []

    def record_episode(self, episode: Episode) -> None:
        with self.cond:
            self.actor_steps += episode.steps
            self.episodes += 1
            self._returns.append(episode.episode_return)
            self.cond.notify_all()

    def record_loss(self, loss: float) -> None:
        with self.cond:
            self._losses.append(loss)

    def drain(self, learner_steps: int, epsilon: float) -> dict:
        with self.cond:
            record = {
                "step": learner_steps,
                "actor_steps": self.actor_steps,
                "episodes": self.episodes,
                "return": float(np.mean(self._returns)) if self._returns else None,
                "loss": float(np.mean(self._losses)) if self._losses else None,
                "epsilon": float(epsilon),
            }
            self._returns.clear()
            self._losses.clear()
        return record


@dataclass
class TrainResult:
    params: NetParams
    metrics: list[dict]
    learner_steps: int
    actor_steps: int
    out_dir: Path | None = None


class _MetricsLog:
    def __init__(self, path: Path | None):
        self.path = path
        self.records: list[dict] = []
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(json.dumps(record) + "\n")
        ret = "n/a" if record["return"] is None else f"{record['return']:.3f}"
        loss = "n/a" if record["loss"] is None else f"{record['loss']:.4f}"
        logger.info(
            f"step={record['step']} actor_steps={record['actor_steps']} "
            f"return={ret} loss={loss} epsilon={record['epsilon']:.3f}"
        )


def run_training(
    env_factory: Callable[[np.random.Generator], Environment],
    spec: NetSpec,
    cfg: TrainConfig,
    seed: int,
    out_dir: str | Path | None = None,
    shaper: ShaperConfig | None = None,
    metadata: dict | None = None,
) -> TrainResult:
    """Train one recurrent Q-network and, if `out_dir` is given, write its checkpoint and metrics."""
    root = np.random.SeedSequence(seed)
    init_seq, learner_seq, *actor_seqs = root.spawn(2 + 2 * cfg.num_actors)
    learner_rng = np.random.default_rng(learner_seq)
    actor_rngs = [np.random.default_rng(s) for s in actor_seqs]

    params = init_params(spec, int(init_seq.generate_state(1)[0]))
    state = LearnerState.create(params, cfg.learning_rate)
    buffer = ReplayBuffer(cfg.replay_capacity, cfg.min_replay)
    decay = int(cfg.epsilon_decay_fraction * cfg.max_learner_steps * cfg.replay_period)
    schedule = EpsilonSchedule(cfg.epsilon_start, cfg.epsilon_end, decay)
    out_dir = Path(out_dir) if out_dir is not None else None
    metrics = _MetricsLog(out_dir / METRICS_NAME if out_dir is not None else None)
    progress = _Progress()

    sample_env = env_factory(np.random.default_rng(0))
    sequence_length = min(cfg.sequence_length, sample_env.horizon)
    collect = partial(collect_episode, shaper=shaper, discount=cfg.discount, sequence_length=sequence_length)

    shaping = "" if shaper is None else f", shaped with beta={shaper.beta} N={shaper.num_proposals}"
    logger.info(
        f"Training {spec.torso} network ({spec.num_params} parameters) "
        f"for {cfg.max_learner_steps} learner steps, seed {seed}{shaping}"
    )

    def learn() -> None:
        _, loss = learner_step(buffer, state, cfg, learner_rng)
        progress.record_loss(loss)
        if state.steps % cfg.log_interval == 0 or state.steps == cfg.max_learner_steps:
            metrics.write(progress.drain(state.steps, schedule(progress.actor_steps)))

    if cfg.deterministic:
        env = env_factory(actor_rngs[0])
        while state.steps < cfg.max_learner_steps:
            episode = collect(env, state.params, actor_rngs[1], epsilon=schedule(progress.actor_steps))
            for sequence in episode.sequences:
                buffer.add(sequence)
            progress.record_episode(episode)
            while buffer.ready and state.steps < min(cfg.max_learner_steps, progress.actor_steps // cfg.replay_period):
                learn()
    else:
        _train_threaded(env_factory, actor_rngs, state, buffer, schedule, progress, cfg, collect, learn)

    result = TrainResult(state.params, metrics.records, state.steps, progress.actor_steps, out_dir)
    if out_dir is not None:
        checkpoint_metadata = {"seed": seed, "config": cfg.to_dict(), **(metadata or {})}
        save_checkpoint(out_dir / CHECKPOINT_NAME, state.params, checkpoint_metadata)
        (out_dir / CONFIG_NAME).write_text(json.dumps(cfg.to_dict(), indent=2))
        logger.info(f"Wrote checkpoint and metrics to {out_dir}")
    return result


def _train_threaded(env_factory, actor_rngs, state, buffer, schedule, progress, cfg, collect, learn) -> None:
    store = ParameterStore(state.params)
    stop = threading.Event()
    errors: list[BaseException] = []

    def may_act() -> bool:
        budget = (state.steps + cfg.num_actors) * cfg.replay_period
        return stop.is_set() or not buffer.ready or progress.actor_steps < budget

    def actor(index: int) -> None:
        env = env_factory(actor_rngs[2 * index])
        rng = actor_rngs[2 * index + 1]
        try:
            while not stop.is_set():
                with progress.cond:
                    progress.cond.wait_for(may_act, timeout=0.1)
                if stop.is_set():
                    break
                episode = collect(env, store.snapshot(), rng, epsilon=schedule(progress.actor_steps))
                for sequence in episode.sequences:
                    buffer.add(sequence)
                progress.record_episode(episode)
        except BaseException as e:
            logger.exception(f"Actor {index} failed")
            errors.append(e)
            stop.set()

    threads = [threading.Thread(target=actor, args=(i,), name=f"actor-{i}", daemon=True) for i in range(cfg.num_actors)]
    for thread in threads:
        thread.start()
    try:
        while state.steps < cfg.max_learner_steps and not errors:
            with progress.cond:
                progress.cond.wait_for(
                    lambda: errors or (buffer.ready and progress.actor_steps // cfg.replay_period > state.steps),
                    timeout=0.1,
                )
            if errors or not (buffer.ready and progress.actor_steps // cfg.replay_period > state.steps):
                continue
            learn()
            store.publish(state.params)
            with progress.cond:
                progress.cond.notify_all()
    finally:
        stop.set()
        with progress.cond:
            progress.cond.notify_all()
        for thread in threads:
            thread.join()
    if errors:
        raise errors[0]


def build_spec(cfg: TrainConfig, env: Environment, use_prev_inputs: bool = True) -> NetSpec:
    return NetSpec.with_width(env.obs_shape, env.num_actions, cfg.width, use_prev_inputs)


def train(mode: str, cfg: TrainConfig, seed: int, out_dir: str | Path | None = None) -> TrainResult:
    """Baseline (plain meta-RL) or risk-shaped training on the configured task partition."""
    if mode not in ("baseline", "risk"):
        raise ValueError(f"train mode must be 'baseline' or 'risk', got {mode!r}")
    shaper = ShaperConfig(cfg.beta, cfg.num_proposals) if mode == "risk" else None
    env_factory = partial(make_environment, cfg)
    spec = build_spec(cfg, env_factory(np.random.default_rng(0)))
    return run_training(env_factory, spec, cfg, seed, out_dir, shaper, metadata={"mode": mode})


def discover_checkpoints(path: str | Path) -> list[Path]:
    """A checkpoint file, a run directory, or a directory of run directories."""
    path = Path(path)
    if path.is_file():
        return [path]
    if (path / CHECKPOINT_NAME).exists():
        return [path / CHECKPOINT_NAME]
    found = sorted(path.glob(f"*/{CHECKPOINT_NAME}"))
    if not found:
        raise FileNotFoundError(f"No checkpoints under {path}")
    return found
