"""Dueling Double Deep Q-Learning for neuro-fuzzy networks and MLP baselines."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, EnvironmentContractError, InputError
from ..inference import InferenceConfig, NeuroFuzzyNetwork
from ..membership import MembershipLayer
from ..neurogenesis import NeurogenesisState, grow
from ..rules import update_cardinality
from ..training import AdamState, StructureTracker, adam_step, backward
from .envs import make_env
from .mlp import MLP
from .replay import ReplayBuffer, Transition

logger = logging.getLogger(__name__)


@dataclass
class RLConfig:
    env: str = "track-and-shoot"
    model: str = "nfn"  # "nfn" or "mlp"
    seed: int = 0
    steps: int = 20_000
    epoch_steps: int = 500
    eval_episodes: int = 25
    gamma: float = 0.95
    lr: float = 1e-3
    batch_size: int = 32
    memory: int = 10_000
    frames: int = 1
    target_sync: int = 1000
    exploration_decay: float = 0.9999
    exploration_floor: float = 0.1
    shared_trunk: bool = False
    # neuro-fuzzy network
    n_rules: int = 64
    n_terms: int = 3
    estimator: str = "STE"
    temperature: float = 0.6
    retain_batches: int = 64
    threshold_percentile: float = 0.0
    epsilon: float = 0.4
    delay: int = 3
    neurogenesis: bool = True
    firing_mode: str = "Sum"
    alpha: float = 1.0
    layer_norm: bool = False
    certainty_factors: bool = False
    # MLP baseline
    hidden: int = 128
    activation: str = "ReLU"

    def __post_init__(self):
        if self.model not in ("nfn", "mlp"):
            raise ConfigError(f"model must be 'nfn' or 'mlp', got {self.model!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.frames < 1 or self.epoch_steps < 1 or self.batch_size < 1:
            raise ConfigError("frames, epoch_steps and batch_size must be >= 1")
        if not 0.0 <= self.exploration_floor <= 1.0:
            raise ConfigError("exploration floor must lie in [0, 1]")


@dataclass
class ExplorationSchedule:
    rate: float = 1.0
    decay: float = 0.9999
    floor: float = 0.1

    def step(self) -> float:
        self.rate = max(self.floor, self.rate * self.decay)
        return self.rate

    @staticmethod
    def after(k: int, decay: float = 0.9999, floor: float = 0.1) -> float:
        return max(floor, decay**k)


def build_network(config: RLConfig, in_dim: int, out_dim: int, low, high, rng: np.random.Generator):
    if config.model == "mlp":
        return MLP(in_dim, out_dim, config.hidden, config.activation, rng)
    inference = InferenceConfig(firing_mode=config.firing_mode, alpha=config.alpha,
                                layer_norm=config.layer_norm,
                                certainty_factors=config.certainty_factors)
    layer = MembershipLayer.evenly_spaced(low, high, config.n_terms, n_attributes=in_dim)
    return NeuroFuzzyNetwork.build(in_dim, out_dim, config.n_rules, config=inference,
                                   estimator=config.estimator, temperature=config.temperature,
                                   retain_batches=config.retain_batches,
                                   threshold_percentile=config.threshold_percentile,
                                   rng=rng, layer=layer)


def parameter_hash(network) -> str:
    h = hashlib.sha256()
    for name, p in sorted(network.parameters().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


class DuelHeads:
    """Value and advantage approximators with online and target copies.

    With ``shared`` a single network emits ``[V, A_1 .. A_k]``.
    """

    def __init__(self, networks: dict, n_actions: int, shared: bool = False):
        expected = {"trunk"} if shared else {"value", "advantage"}
        if set(networks) != expected:
            raise ConfigError(f"expected networks {sorted(expected)}, got {sorted(networks)}")
        self.online = dict(networks)
        self.n_actions = n_actions
        self.shared = shared
        self.target = {k: net.copy() for k, net in self.online.items()}
        self.synced_hash = self.online_hash()

    @classmethod
    def build(cls, config: RLConfig, obs_dim: int, n_actions: int, low, high, rng) -> DuelHeads:
        if config.shared_trunk:
            nets = {"trunk": build_network(config, obs_dim, 1 + n_actions, low, high, rng)}
        else:
            nets = {"value": build_network(config, obs_dim, 1, low, high, rng),
                    "advantage": build_network(config, obs_dim, n_actions, low, high, rng)}
        return cls(nets, n_actions, config.shared_trunk)

    def _split(self, outputs: dict):
        if self.shared:
            out = outputs["trunk"]
            return out[:, :1], out[:, 1:]
        return outputs["value"], outputs["advantage"]

    def q_values(self, states, which: str = "online") -> np.ndarray:
        """Greedy Q values; never samples noise or mutates any network."""
        nets = self.online if which == "online" else self.target
        states = np.atleast_2d(np.asarray(states, dtype=float))
        outputs = {k: net.forward(states, **_greedy(net))[0] for k, net in nets.items()}
        return aggregate(*self._split(outputs))

    def online_hash(self) -> str:
        return "|".join(parameter_hash(self.online[k]) for k in sorted(self.online))

    def target_hash(self) -> str:
        return "|".join(parameter_hash(self.target[k]) for k in sorted(self.target))

    def sync(self) -> None:
        for k, net in self.online.items():
            self.target[k] = net.copy()
        self.synced_hash = self.online_hash()


def _greedy(net) -> dict:
    # reuse the retained Gumbel noise so acting sees the structure being trained
    if net.blocks and all(b.rules.noise is not None and b.rules.noise.shape == b.rules.logits.shape
                          for b in net.blocks):
        return {"freeze": True}
    return {"evaluate": True}


def aggregate(value: np.ndarray, advantage: np.ndarray) -> np.ndarray:
    """``Q = V + A - mean_a A``."""
    value = np.asarray(value, dtype=float).reshape(-1, 1)
    advantage = np.atleast_2d(np.asarray(advantage, dtype=float))
    return value + advantage - advantage.mean(axis=1, keepdims=True)


def q_values(heads: DuelHeads, state) -> np.ndarray:
    """Greedy (noise-free) Q vector for one state."""
    return heads.q_values(state)[0]


def act(heads: DuelHeads, state, schedule: ExplorationSchedule | float, rng: np.random.Generator,
        evaluate: bool = False) -> int:
    """Epsilon-greedy action; evaluation is always greedy."""
    rate = schedule.rate if isinstance(schedule, ExplorationSchedule) else float(schedule)
    if not evaluate and rng.random() < rate:
        return int(rng.integers(heads.n_actions))
    return int(np.argmax(heads.q_values(state)[0]))


def double_dqn_targets(q_online_next, q_target_next, rewards, terminals, gamma: float) -> np.ndarray:
    """``r + gamma (1 - terminal) Q_target(s', argmax_a Q_online(s', a))``."""
    best = np.argmax(q_online_next, axis=1)
    bootstrap = q_target_next[np.arange(len(best)), best]
    return np.asarray(rewards, dtype=float) + gamma * (1.0 - np.asarray(terminals, dtype=float)) * bootstrap


def ddql_update(heads: DuelHeads, batch, gamma: float, rng: np.random.Generator | None = None):
    """Loss and per-network gradients for one Double-DQL minibatch.

    ``batch`` is ``(states, actions, rewards, next_states, terminals)`` or a
    list of :class:`Transition`.  Returns ``(loss, grads, tapes)``.
    """
    if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], Transition):
        batch = (np.array([t.state for t in batch]), np.array([t.action for t in batch]),
                 np.array([t.reward for t in batch]), np.array([t.next_state for t in batch]),
                 np.array([t.terminal for t in batch]))
    states, actions, rewards, next_states, terminals = batch
    n = len(actions)
    if n == 0:
        raise InputError("ddql_update needs a nonempty batch")
    actions = np.asarray(actions, dtype=int)
    if gamma > 0:
        y = double_dqn_targets(heads.q_values(next_states, "online"),
                               heads.q_values(next_states, "target"), rewards, terminals, gamma)
    else:
        y = np.asarray(rewards, dtype=float)

    outputs, tapes = {}, {}
    for k, net in heads.online.items():
        outputs[k], tapes[k] = net.forward(states, rng=rng)
    value, advantage = heads._split(outputs)
    q = aggregate(value, advantage)
    rows = np.arange(n)
    err = q[rows, actions] - y
    loss = float((err**2).mean())
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * err / n
    d_value = dq.sum(axis=1, keepdims=True)
    d_adv = dq - dq.mean(axis=1, keepdims=True)
    if heads.shared:
        upstream = {"trunk": np.concatenate([d_value, d_adv], axis=1)}
    else:
        upstream = {"value": d_value, "advantage": d_adv}
    grads = {k: backward(heads.online[k], tapes[k], upstream[k]) for k in heads.online}
    return loss, grads, tapes


@dataclass
class EpochRecord:
    epoch: int
    mean: float
    sd: float
    slope: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class RLReport:
    epochs: list[EpochRecord]
    losses: list[float]
    oracle_mean: float
    best_mean: float
    train_steps: int
    env_steps: int
    events: list = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.best_mean / self.oracle_mean if self.oracle_mean else math.nan


def slope(scores) -> float:
    """Least-squares slope of ``scores`` against their index."""
    y = np.asarray(scores, dtype=float)
    if len(y) < 2:
        return 0.0
    return float(np.polyfit(np.arange(len(y)), y, 1)[0])


def _checked(obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if not np.isfinite(obs).all():
        raise EnvironmentContractError(f"environment emitted a non-finite observation {obs}")
    return obs


def env_step(env, action: int, frames: int = 1):
    """Repeat ``action`` for ``frames`` ticks; rewards are summed."""
    total = 0.0
    for _ in range(frames):
        obs, reward, terminal = env.step(action)
        obs = _checked(obs)
        if not math.isfinite(reward):
            raise EnvironmentContractError(f"environment emitted a non-finite reward {reward}")
        total += reward
        if terminal:
            break
    return obs, total, bool(terminal)


def run_episode(env, policy, seed: int, frames: int = 1) -> float:
    """Total reward of one episode; ``policy(obs) -> action``."""
    obs = _checked(env.reset(seed))
    total, terminal = 0.0, False
    while not terminal:
        obs, reward, terminal = env_step(env, policy(obs), frames)
        total += reward
    return total


def evaluate(env, heads: DuelHeads, seeds, frames: int = 1) -> np.ndarray:
    """Greedy returns on fixed seeds; no parameters, noise or structure change."""
    return np.array([run_episode(env, lambda s: int(np.argmax(heads.q_values(s)[0])), seed, frames)
                     for seed in seeds])


def oracle_scores(env, seeds, frames: int = 1) -> np.ndarray:
    return np.array([run_episode(env, lambda s: env.oracle_action(), seed, frames) for seed in seeds])


def random_scores(env, seeds, rng: np.random.Generator, frames: int = 1) -> np.ndarray:
    return np.array([run_episode(env, lambda s: int(rng.integers(env.n_actions)), seed, frames)
                     for seed in seeds])


def eval_seeds(config: RLConfig) -> list[int]:
    return [1_000_000 + 1000 * config.seed + k for k in range(config.eval_episodes)]


def train_loop(config: RLConfig | None = None, env=None, episode_log=None, event_log=None,
               metrics_path=None) -> RLReport:
    """Train a dueling double DQL agent and evaluate it after every epoch.

    ``episode_log`` receives one JSON line per epoch, ``metrics_path`` one per
    training step and ``event_log`` one per sprouted fuzzy set.
    """
    config = config or RLConfig()
    env = env if env is not None else make_env(config.env)
    # evaluation gets its own instance so training episodes are not interrupted
    eval_env = copy.deepcopy(env)
    rng = np.random.default_rng(config.seed)
    heads = DuelHeads.build(config, env.obs_dim, env.n_actions, env.obs_low, env.obs_high, rng)
    optimizers = {k: AdamState(lr=config.lr) for k in heads.online}
    if event_log:
        open(event_log, "w").close()
    growth = {k: [NeurogenesisState(b.in_dim, config.delay, config.epsilon, log_path=event_log)
                  for b in net.blocks]
              for k, net in heads.online.items()}
    trackers = {k: StructureTracker() for k in heads.online}
    buffer = ReplayBuffer(config.memory, env.obs_dim)
    schedule = ExplorationSchedule(1.0, config.exploration_decay, config.exploration_floor)
    seeds = eval_seeds(config)
    oracle = float(oracle_scores(eval_env, seeds, config.frames).mean()) if hasattr(env, "oracle_action") else math.nan

    sink = open(episode_log, "w") if episode_log else None
    step_sink = open(metrics_path, "w") if metrics_path else None
    epochs: list[EpochRecord] = []
    losses: list[float] = []
    train_steps = env_steps = 0
    obs = _checked(env.reset(int(rng.integers(2**31))))
    try:
        for epoch in range(max(1, config.steps // config.epoch_steps)):
            for _ in range(config.epoch_steps):
                action = act(heads, obs, schedule, rng)
                next_obs, reward, terminal = env_step(env, action, config.frames)
                env_steps += 1
                buffer.push(Transition(obs, action, reward, next_obs, terminal))
                obs = _checked(env.reset(int(rng.integers(2**31)))) if terminal else next_obs
                if len(buffer) < config.batch_size:
                    continue
                batch = buffer.sample(rng, config.batch_size)
                loss, grads, tapes = ddql_update(heads, batch, config.gamma, rng)
                failures = edits = 0
                for k, net in heads.online.items():
                    adam_step(net, grads[k], optimizers[k])
                    block_tapes = tapes[k] if isinstance(tapes[k], list) else [tapes[k]]
                    if net.blocks:
                        edits += trackers[k].update(block_tapes)
                    for block, state, tape in zip(net.blocks, growth[k], block_tapes):
                        update_cardinality(block.rules, np.exp(-tape.deviation) * block.layer.mask[None])
                        if config.neurogenesis:
                            report, _ = grow(state, block.layer, block.rules, tape.X, train_steps)
                            failures += len(report.failing)
                if step_sink:
                    step_sink.write(json.dumps({
                        "step": train_steps, "epoch": epoch, "loss": loss, "epsilon_failures": failures,
                        "structure_edits": edits,
                        "term_counts": [b.layer.term_counts.tolist()
                                        for k in sorted(heads.online) for b in heads.online[k].blocks],
                    }) + "\n")
                losses.append(loss)
                train_steps += 1
                schedule.step()
                if train_steps % config.target_sync == 0:
                    heads.sync()
            scores = evaluate(eval_env, heads, seeds, config.frames)
            means = [r.mean for r in epochs] + [float(scores.mean())]
            record = EpochRecord(epoch, float(scores.mean()), float(scores.std()), slope(means))
            epochs.append(record)
            if sink:
                sink.write(record.to_json() + "\n")
                sink.flush()
            logger.info("epoch %d: mean %.3f sd %.3f (oracle %.3f, exploration %.3f)",
                        epoch, record.mean, record.sd, oracle, schedule.rate)
    finally:
        for fh in (sink, step_sink):
            if fh:
                fh.close()
    events = [ev for states in growth.values() for s in states for ev in s.events]
    best = max((r.mean for r in epochs), default=math.nan)
    return RLReport(epochs, losses, oracle, best, train_steps, env_steps, events)
