"""Deep deterministic policy gradient hedger.

Actor and critic are small dense nets; the actor's raw output is squashed
through tanh onto the holding bounds, and the critic sees the normalized
state features plus the normalized (post-squash) action. Per-transition
minibatch updates with target networks and Ornstein-Uhlenbeck exploration.
Rewards are scaled by ``reward_scale`` (default 1/contract_multiplier) for
learning only; reported learning curves stay in unscaled currency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig, HedgeState, HedgingEnv, featurize
from .market import INIT_DOMAIN, NOISE_DOMAIN, SHUFFLE_DOMAIN, TRAIN_DOMAIN, substream
from .nn import AdamState, DenseNet, load_checkpoint, save_checkpoint, soft_update


class TrainingDiverged(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass
class DdpgConfig:
    actor_hidden: tuple[int, ...] = (12, 12, 12)
    critic_hidden: tuple[int, ...] = (24, 24, 24)
    actor_lr: float = 1e-5
    critic_lr: float = 1e-4
    smoothing: float = 1e-3  # target update: p_t <- (1-s) p_t + s p
    episodes: int = 5000
    minibatch: int = 64
    buffer_capacity: int = 100_000
    warmup: int = 1000  # stored transitions before updates begin
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_dt: float = 1.0
    gamma: float = 0.99
    reward_scale: float | None = None  # None -> 1/contract_multiplier
    include_delta: bool = True

    def __post_init__(self):
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if not 0.0 < self.smoothing < 1.0:
            raise ValueError("smoothing must be in (0, 1)")
        if self.buffer_capacity < self.minibatch:
            raise ValueError("buffer capacity must cover one minibatch")


class OuNoise:
    """Ornstein-Uhlenbeck exploration noise.

    Uses the exact AR(1) discretization x' = x e^{-theta dt} + s eps with
    s^2 = sigma^2 (1 - e^{-2 theta dt}) / (2 theta), so the stationary
    standard deviation is exactly sigma / sqrt(2 theta).
    """

    def __init__(self, theta: float, sigma: float, dt: float, rng: np.random.Generator):
        self.theta = theta
        self.sigma = sigma
        self.decay = math.exp(-theta * dt)
        self.scale = sigma * math.sqrt((1.0 - self.decay**2) / (2.0 * theta))
        self.rng = rng
        self.x = 0.0

    def reset(self) -> None:
        self.x = 0.0

    def sample(self) -> float:
        self.x = self.x * self.decay + self.scale * self.rng.standard_normal()
        return self.x


class ReplayBuffer:
    """Uniform-sampling FIFO ring buffer of transitions."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.states = np.empty((capacity, state_dim))
        self.actions = np.empty(capacity)
        self.rewards = np.empty(capacity)
        self.next_states = np.empty((capacity, state_dim))
        self.dones = np.empty(capacity)
        self.size = 0
        self.cursor = 0

    def push(self, s, a, r, s2, done) -> None:
        i = self.cursor
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self.dones[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=n)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.dones[idx])


def select_action(actor: DenseNet, features: np.ndarray, bounds: tuple[float, float],
                  noise: OuNoise | None = None, explore: bool = False) -> float:
    """Deterministic actor output mapped onto the holding bounds; one OU
    increment is added before the tanh mapping when exploring."""
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite state features")
    u = float(actor.forward(features[None, :], mode="eval")[0][0, 0])
    if explore:
        u += noise.sample()
    lo, hi = bounds
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * math.tanh(u)


def _normalized_action(holding: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return (holding - 0.5 * (lo + hi)) / (0.5 * (hi - lo))


def critic_update(critic: DenseNet, critic_target: DenseNet, actor_target: DenseNet,
                  batch, gamma: float, adam: AdamState) -> float:
    """One ADAM step on the mean squared Bellman error; terminal transitions
    bootstrap nothing (target = r). Returns the pre-step loss."""
    s, a, r, s2, done = batch
    u2, _ = actor_target.forward(s2, mode="eval")
    a2 = np.tanh(u2[:, 0])
    q2, _ = critic_target.forward(np.column_stack([s2, a2]), mode="eval")
    target = r + gamma * (1.0 - done) * q2[:, 0]
    q, tape = critic.forward(np.column_stack([s, a]), mode="train")
    err = q[:, 0] - target
    loss = float(np.mean(err**2))
    dy = (2.0 * err / len(err))[:, None]
    grads, _ = critic.backward(tape, dy)
    adam.step(critic.params(), grads)
    return loss


def actor_gradient(actor: DenseNet, critic: DenseNet, s: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Objective mean_s Q(s, tanh(mu(s))) and its exact actor-parameter gradient."""
    u, tape_a = actor.forward(s, mode="train")
    a = np.tanh(u[:, 0])
    q, tape_c = critic.forward(np.column_stack([s, a]), mode="train")
    objective = float(np.mean(q[:, 0]))
    dy = np.full((len(s), 1), 1.0 / len(s))
    _, dx = critic.backward(tape_c, dy)
    da = dx[:, -1]  # action is the last critic input column
    du = da * (1.0 - a**2)
    grads, _ = actor.backward(tape_a, du[:, None])
    return objective, grads


def actor_update(actor: DenseNet, critic: DenseNet, batch, adam: AdamState) -> float:
    """Gradient ascent on mean_s Q(s, tanh(mu(s))); critic parameters are
    read-only here. Returns the pre-step objective."""
    objective, grads = actor_gradient(actor, critic, batch[0])
    adam.step(actor.params(), [-g for g in grads])
    return objective


@dataclass
class DdpgAgent:
    actor: DenseNet
    critic: DenseNet
    actor_target: DenseNet
    critic_target: DenseNet
    config: DdpgConfig
    env_cfg: EnvConfig

    def policy(self):
        """Frozen greedy policy HedgeState -> holding (shares)."""
        bounds = self.env_cfg.holding_bounds

        def act(state: HedgeState) -> float:
            f = featurize(state, self.env_cfg, self.config.include_delta)
            return select_action(self.actor, f, bounds)

        return act

    def policy_on_features(self):
        """Vectorized map from normalized feature rows to holdings (for SHAP)."""
        lo, hi = self.env_cfg.holding_bounds

        def f(x: np.ndarray) -> np.ndarray:
            u, _ = self.actor.forward(np.atleast_2d(x), mode="eval")
            return 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.tanh(u[:, 0])

        return f

    def save(self, prefix: str) -> None:
        meta = {"include_delta": self.config.include_delta}
        save_checkpoint(self.actor, prefix + ".actor.ckpt", extra=meta)
        save_checkpoint(self.critic, prefix + ".critic.ckpt", extra=meta)
        save_checkpoint(self.actor_target, prefix + ".actor_target.ckpt", extra=meta)
        save_checkpoint(self.critic_target, prefix + ".critic_target.ckpt", extra=meta)

    @classmethod
    def load(cls, prefix: str, config: DdpgConfig, env_cfg: EnvConfig) -> "DdpgAgent":
        actor, meta = load_checkpoint(prefix + ".actor.ckpt")
        critic, _ = load_checkpoint(prefix + ".critic.ckpt")
        actor_target, _ = load_checkpoint(prefix + ".actor_target.ckpt")
        critic_target, _ = load_checkpoint(prefix + ".critic_target.ckpt")
        if meta.get("include_delta") is not None:
            config.include_delta = bool(meta["include_delta"])
        return cls(actor, critic, actor_target, critic_target, config, env_cfg)


def train(config: DdpgConfig, env_cfg: EnvConfig, seed: int,
          progress=None) -> tuple[DdpgAgent, np.ndarray]:
    """Train for ``config.episodes`` episodes; returns the agent and the
    per-episode cumulative (unscaled) reward curve."""
    n_features = 5 if config.include_delta else 4
    rng_init = substream(seed, INIT_DOMAIN)
    actor = DenseNet.build([n_features, *config.actor_hidden, 1], rng_init)
    critic = DenseNet.build([n_features + 1, *config.critic_hidden, 1], rng_init)
    actor_target = actor.clone()
    critic_target = critic.clone()
    adam_a = AdamState(actor.params(), lr=config.actor_lr)
    adam_c = AdamState(critic.params(), lr=config.critic_lr)
    noise = OuNoise(config.ou_theta, config.ou_sigma, config.ou_dt,
                    substream(seed, NOISE_DOMAIN))
    sample_rng = substream(seed, SHUFFLE_DOMAIN)
    buffer = ReplayBuffer(config.buffer_capacity, n_features)

    scale = config.reward_scale
    if scale is None:
        scale = 1.0 / env_cfg.contract_multiplier
    bounds = env_cfg.holding_bounds
    rho = 1.0 - config.smoothing
    env = HedgingEnv(env_cfg)
    n_steps = env_cfg.grid.n_steps
    curve = np.empty(config.episodes)

    for ep in range(config.episodes):
        shocks = substream(seed, TRAIN_DOMAIN, ep).standard_normal(n_steps)
        noise.reset()
        state = env.reset()
        f = featurize(state, env_cfg, config.include_delta)
        total_reward = 0.0
        for t in range(n_steps):
            holding = select_action(actor, f, bounds, noise, explore=True)
            out = env.step(holding, float(shocks[t]))
            f2 = featurize(out.next, env_cfg, config.include_delta)
            buffer.push(f, _normalized_action(holding, bounds),
                        -out.cost * scale, f2, out.done)
            total_reward += out.reward
            f = f2
            if buffer.size >= max(config.warmup, config.minibatch):
                batch = buffer.sample(config.minibatch, sample_rng)
                loss = critic_update(critic, critic_target, actor_target,
                                     batch, config.gamma, adam_c)
                actor_update(actor, critic, batch, adam_a)
                if not math.isfinite(loss):
                    raise TrainingDiverged(
                        f"critic loss became non-finite at episode {ep}, step {t}"
                    )
                soft_update(critic_target, critic, rho)
                soft_update(actor_target, actor, rho)
        curve[ep] = total_reward
        if progress is not None:
            progress(ep, total_reward)
    agent = DdpgAgent(actor, critic, actor_target, critic_target, config, env_cfg)
    return agent, curve
