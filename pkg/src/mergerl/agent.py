"""DQN with experience replay and a single weight set.

The same weights produce the bootstrap targets and receive the updates
(there is no target network unless ``Hyperparams.target_sync`` is set).
Each environment step after warm-up draws one minibatch; targets for the
whole batch are computed first, then the samples are applied as
sequential per-sample SGD steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .env import MergeEnv, derive_seed
from .neural import Weights, forward, init_network, sgd_batch
from .sim import ConfigError

POLICIES = ("eps_greedy", "boltzmann")


@dataclass(frozen=True)
class PolicySpec:
    kind: str = "eps_greedy"
    epsilon: float = 0.1
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 32
    warmup: int = 100
    episodes: int = 400
    steps_per_episode: int = 50
    buffer_capacity: int = 10_000
    hidden: tuple[int, ...] = (24, 24)
    # 0 disables the target network
    target_sync: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")
        if not 1 <= self.batch_size <= self.buffer_capacity:
            raise ConfigError("batch_size must lie in [1, buffer_capacity]")
        if self.warmup < 0 or self.target_sync < 0:
            raise ConfigError("warmup and target_sync must be >= 0")
        if self.episodes < 1 or self.steps_per_episode < 1:
            raise ConfigError("episodes and steps_per_episode must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.episodes * self.steps_per_episode


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is evicted first."""

    def __init__(self, capacity: int, width: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.width = width
        self.s = np.zeros((capacity, width))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, width))
        self.done = np.zeros(capacity, dtype=bool)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def push(self, t: Transition) -> None:
        s, s_next = np.asarray(t.s, dtype=np.float64), np.asarray(t.s_next, dtype=np.float64)
        if s.shape != (self.width,) or s_next.shape != (self.width,):
            raise ValueError(f"observation width must be {self.width}")
        i = self.inserted % self.capacity
        self.s[i] = s
        self.a[i] = t.a
        self.r[i] = t.r
        self.s_next[i] = s_next
        self.done[i] = t.done
        self.inserted += 1

    def _order(self) -> np.ndarray:
        # physical slots from oldest to newest
        n = len(self)
        start = self.inserted % self.capacity if self.inserted > self.capacity else 0
        return (start + np.arange(n)) % self.capacity

    def __getitem__(self, k: int) -> Transition:
        """``k``-th oldest stored transition."""
        i = self._order()[k]
        return Transition(self.s[i].copy(), int(self.a[i]), float(self.r[i]), self.s_next[i].copy(), bool(self.done[i]))

    def contents(self) -> list[Transition]:
        return [self[k] for k in range(len(self))]

    def sample_indices(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if k > len(self):
            raise ValueError(f"cannot sample {k} transitions from a buffer holding {len(self)}")
        return rng.choice(len(self), size=k, replace=False)

    def sample(self, k: int, rng: np.random.Generator) -> list[Transition]:
        """``k`` distinct stored transitions, uniformly at random."""
        return [self[int(j)] for j in self.sample_indices(k, rng)]


def push_transition(buf: ReplayBuffer, t: Transition) -> None:
    buf.push(t)


def sample_minibatch(buf: ReplayBuffer, k: int, rng: np.random.Generator) -> list[Transition]:
    return buf.sample(k, rng)


def select_action_eps_greedy(q, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform action with probability ``epsilon``, else argmax (lowest index on ties)."""
    q = np.asarray(q)
    if rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def boltzmann_probs(q, tau: float) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    e = np.exp((q - q.max()) / tau)
    return e / e.sum()


def select_action_boltzmann(q, tau: float, rng: np.random.Generator) -> int:
    """Sample from the softmax of ``q / tau``."""
    cdf = np.cumsum(boltzmann_probs(q, tau))
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), cdf.size - 1))


def select_action(policy: PolicySpec, q, rng: np.random.Generator) -> int:
    if policy.kind == "eps_greedy":
        return select_action_eps_greedy(q, policy.epsilon, rng)
    return select_action_boltzmann(q, policy.tau, rng)


def td_target(t: Transition, gamma: float, w: Weights) -> float:
    if t.done:
        return t.r
    return t.r + gamma * float(np.max(forward(w, t.s_next)))


def td_targets(r: np.ndarray, s_next: np.ndarray, done: np.ndarray, gamma: float, w: Weights) -> np.ndarray:
    """Vectorized :func:`td_target` over a batch."""
    boot = forward(w, s_next).max(axis=1)
    return np.where(done, r, r + gamma * boot)


class StepLog(NamedTuple):
    episode: int
    step: int
    action: int
    reward: float
    q_max: float
    wall_ms: float


def train(
    env: MergeEnv,
    policy: PolicySpec,
    hp: Hyperparams,
    seed: int,
    init: Optional[Weights] = None,
) -> tuple[Weights, list[StepLog]]:
    """Run ``hp.episodes`` episodes of DQN training; deterministic per seed."""
    if hp.steps_per_episode != env.cfg.steps_per_episode:
        raise ConfigError(
            f"steps_per_episode mismatch: agent {hp.steps_per_episode}, env {env.cfg.steps_per_episode}"
        )
    widths = (env.obs_width, *hp.hidden, env.n_actions)
    w = init.copy() if init is not None else init_network(widths, seed=derive_seed(seed, 1))
    if w.widths != widths:
        raise ConfigError(f"network widths {w.widths} do not match environment {widths}")
    rng = np.random.default_rng(derive_seed(seed, 2))
    buf = ReplayBuffer(hp.buffer_capacity, env.obs_width)
    frozen = w.copy() if hp.target_sync else w
    log: list[StepLog] = []
    total = 0
    for episode in range(hp.episodes):
        obs = env.reset(derive_seed(seed, 3, episode))
        for step in range(hp.steps_per_episode):
            t0 = time.perf_counter()
            q = forward(w, obs)
            action = select_action(policy, q, rng)
            obs_next, reward, done, _ = env.step(action)
            buf.push(Transition(obs, action, reward, obs_next, done))
            total += 1
            if total >= hp.warmup and len(buf) >= hp.batch_size:
                idx = buf.sample_indices(hp.batch_size, rng)
                slots = buf._order()[idx]
                y = td_targets(buf.r[slots], buf.s_next[slots], buf.done[slots], hp.gamma, frozen)
                sgd_batch(w, buf.s[slots], buf.a[slots], y, hp.lr)
                if hp.target_sync and total % hp.target_sync == 0:
                    frozen = w.copy()
            log.append(StepLog(episode, step, action, reward, float(q.max()),
                               (time.perf_counter() - t0) * 1e3))
            obs = obs_next
    return w, log


def greedy_rollouts(env: MergeEnv, w: Weights, episodes: int, seed: int) -> list[StepLog]:
    """Play ``episodes`` episodes with argmax actions and no learning."""
    if w.widths[0] != env.obs_width or w.widths[-1] != env.n_actions:
        raise ConfigError(
            f"network widths {w.widths} incompatible with observation width {env.obs_width} "
            f"and {env.n_actions} actions"
        )
    log = []
    for episode in range(episodes):
        obs = env.reset(derive_seed(seed, 4, episode))
        for step in range(env.cfg.steps_per_episode):
            t0 = time.perf_counter()
            q = forward(w, obs)
            action = int(np.argmax(q))
            obs, reward, _, _ = env.step(action)
            log.append(StepLog(episode, step, action, reward, float(q.max()),
                               (time.perf_counter() - t0) * 1e3))
    return log
