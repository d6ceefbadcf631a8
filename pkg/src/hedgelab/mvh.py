"""Deep trajectory-based stochastic-control hedger.

One feedforward policy net per trading step, stacked into a single
differentiable graph. A batch rollout simulates the stock from given shocks,
applies each step's policy to the (normalized) state, accumulates the
discounted stepwise mean-variance costs plus the terminal settlement, and
returns the batch mean. Backpropagation runs through the holding chain only:
stock, option price, and Delta are exogenous (the control does not move the
market), but the holding feeds the next step both as the rebalancing base
(rate parametrization) and as an input feature.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .env import EnvConfig, HedgeState
from .market import (
    DROPOUT_DOMAIN,
    INIT_DOMAIN,
    SHUFFLE_DOMAIN,
    TRAIN_DOMAIN,
    prices_from_shocks,
    substream,
)
from .nn import AdamState, DenseNet, load_checkpoint, save_checkpoint
from .pricing import bs_call_delta, bs_call_price


class TrainingDiverged(RuntimeError):
    """Raised when the training loss explodes; carries the last good stack."""

    def __init__(self, message: str, stack: "PolicyStack | None" = None):
        super().__init__(message)
        self.stack = stack


@dataclass
class MvhTrainConfig:
    hidden: tuple[int, ...] = (10, 15, 10)
    parametrization: str = "rate"  # "rate" or "direct"
    epochs: int = 100
    samples_per_epoch: int = 50_000
    minibatch: int = 256
    lr: float = 1e-3
    lr_halve_every: int = 25  # epochs between halvings of the learning rate
    dropout: float = 0.25
    batch_norm: bool = True
    gamma: float = 0.99
    include_delta: bool = True
    rate_scale: float = 1.0  # rate output: contract fractions per step
    output_scale: float = 0.01  # near-zero policy init: start close to no-trade

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.samples_per_epoch < self.minibatch:
            raise ValueError("samples_per_epoch must cover one minibatch")
        if self.parametrization not in ("rate", "direct"):
            raise ValueError("parametrization must be 'rate' or 'direct'")


class PolicyStack:
    """n_steps per-step policy networks sharing one input feature contract."""

    def __init__(self, nets: list[DenseNet], env_cfg: EnvConfig,
                 parametrization: str = "rate", include_delta: bool = True,
                 rate_scale: float = 1.0):
        if len(nets) != env_cfg.grid.n_steps:
            raise ValueError("need exactly one network per trading step")
        self.nets = nets
        self.env_cfg = env_cfg
        self.parametrization = parametrization
        self.include_delta = include_delta
        self.rate_scale = rate_scale

    @classmethod
    def build(cls, env_cfg: EnvConfig, config: MvhTrainConfig, rng: np.random.Generator) -> "PolicyStack":
        n_features = 5 if config.include_delta else 4
        nets = [
            DenseNet.build([n_features, *config.hidden, 1], rng,
                           batch_norm=config.batch_norm, dropout=config.dropout)
            for _ in range(env_cfg.grid.n_steps)
        ]
        return cls(nets, env_cfg, config.parametrization, config.include_delta,
                   config.rate_scale)

    @property
    def n_steps(self) -> int:
        return len(self.nets)

    def params(self) -> list[np.ndarray]:
        out = []
        for net in self.nets:
            out.extend(net.params())
        return out

    def _features(self, m: int, stock, option_price, delta, holding) -> np.ndarray:
        cfg = self.env_cfg
        t_frac = (m * cfg.grid.dt) / cfg.option.maturity
        cols = [
            np.full_like(np.asarray(stock, dtype=float), t_frac),
            np.asarray(stock, dtype=float) / cfg.market.s0,
            np.asarray(option_price, dtype=float) / cfg.market.s0,
            np.asarray(delta, dtype=float),
            np.asarray(holding, dtype=float) / cfg.contract_multiplier,
        ]
        if not self.include_delta:
            del cols[3]
        return np.column_stack(cols)

    def _apply(self, raw: np.ndarray, prev: np.ndarray):
        """Map net outputs to holdings; returns (holding, dchain, draw) where
        dchain = d holding / d prev (excluding the feature channel) and
        draw = d holding / d raw output."""
        lo, hi = self.env_cfg.holding_bounds
        mult = self.env_cfg.contract_multiplier
        if self.parametrization == "rate":
            pre = prev + raw * mult * self.rate_scale
            u = np.clip(pre, lo, hi)
            mask = ((pre > lo) & (pre < hi)).astype(float)
            return u, mask, mask * mult * self.rate_scale
        z = np.tanh(raw)
        u = 0.5 * (lo + hi) + 0.5 * (hi - lo) * z
        return u, np.zeros_like(u), 0.5 * (hi - lo) * (1.0 - z**2)

    def act(self, step: int, state: HedgeState, prev_holding: float) -> float:
        """Eval-mode holding for one state (used when driving the MDP env)."""
        if not 0 <= step < self.n_steps:
            raise ValueError(f"step {step} out of range [0, {self.n_steps})")
        x = self._features(step, state.stock, state.option_price, state.delta,
                           prev_holding)
        raw, _ = self.nets[step].forward(x, mode="eval")
        u, _, _ = self._apply(raw[:, 0], np.asarray([prev_holding]))
        return float(u[0])

    def policy(self):
        """HedgeState -> holding callback for hedging_env rollouts."""
        return lambda state: self.act(state.step_index, state, state.holding)

    def step_policy_on_features(self, step: int):
        """Raw-feature map of the step policy for attribution: feature rows
        (time, stock, option_price, [delta,] holding) -> action units.
        Rate mode yields the rebalancing trade in shares; direct mode the
        holding in shares."""
        cfg = self.env_cfg

        def f(x_raw: np.ndarray) -> np.ndarray:
            x_raw = np.atleast_2d(np.asarray(x_raw, dtype=float))
            x = x_raw.copy()
            x[:, 0] = x_raw[:, 0] / cfg.option.maturity
            x[:, 1] = x_raw[:, 1] / cfg.market.s0
            x[:, 2] = x_raw[:, 2] / cfg.market.s0
            x[:, -1] = x_raw[:, -1] / cfg.contract_multiplier
            raw, _ = self.nets[step].forward(x, mode="eval")
            prev = x_raw[:, -1]
            u, _, _ = self._apply(raw[:, 0], prev)
            if self.parametrization == "rate":
                return u - prev
            return u

        return f

    # -- persistence ---------------------------------------------------------

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        manifest = {
            "n_steps": self.n_steps,
            "parametrization": self.parametrization,
            "include_delta": self.include_delta,
            "rate_scale": self.rate_scale,
        }
        with open(os.path.join(directory, "stack.json"), "w") as fh:
            json.dump(manifest, fh, sort_keys=True)
        for m, net in enumerate(self.nets):
            save_checkpoint(net, os.path.join(directory, f"policy_{m:03d}.ckpt"))

    @classmethod
    def load(cls, directory: str, env_cfg: EnvConfig) -> "PolicyStack":
        with open(os.path.join(directory, "stack.json")) as fh:
            manifest = json.load(fh)
        nets = [
            load_checkpoint(os.path.join(directory, f"policy_{m:03d}.ckpt"))[0]
            for m in range(manifest["n_steps"])
        ]
        return cls(nets, env_cfg, manifest["parametrization"],
                   manifest["include_delta"], manifest.get("rate_scale", 1.0))

    def snapshot(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params()]

    def restore(self, snap: list[np.ndarray]) -> None:
        for p, q in zip(self.params(), snap):
            p[...] = q


class TrajectoryTape:
    """Caches for one backward pass through a batched trajectory rollout."""

    def __init__(self):
        self.steps: list[dict] = []
        self.batch_size = 0
        self.stack: PolicyStack | None = None
        self.gamma = 1.0
        self.consumed = False


def rollout_loss(stack: PolicyStack, shocks: np.ndarray, env_cfg: EnvConfig,
                 gamma: float = 0.99, mode: str = "eval",
                 rng: np.random.Generator | None = None) -> tuple[float, TrajectoryTape]:
    """Mean over paths of the gamma-weighted cumulative stepwise cost.

    The stock path is driven by the given shock rows; the option is marked by
    the book-keeping model at every node (intrinsic at maturity) and the
    terminal unwind cost is folded into the last step, matching hedging_env.
    """
    cfg = env_cfg
    shocks = np.atleast_2d(np.asarray(shocks, dtype=float))
    n = cfg.grid.n_steps
    if shocks.shape[1] != n:
        raise ValueError("shock width must equal the number of trading steps")
    b = shocks.shape[0]
    grid, mkt, opt = cfg.grid, cfg.market, cfg.option

    prices = prices_from_shocks(shocks, grid, mkt)  # (b, n+1)
    times = grid.times
    taus = np.maximum(opt.maturity - times, 0.0)
    taus[-1] = 0.0
    dfs = np.exp(-mkt.rate * times)
    calls = np.empty_like(prices)
    deltas = np.empty_like(prices)
    for m in range(n + 1):
        calls[:, m] = bs_call_price(prices[:, m], opt, taus[m], mkt.sigma, mkt.rate)
        deltas[:, m] = bs_call_delta(prices[:, m], opt, taus[m], mkt.sigma, mkt.rate)

    disc_s = dfs * prices
    disc_c = dfs * calls
    mult = cfg.contract_multiplier
    option_leg = cfg.option_holding * mult * np.diff(disc_c, axis=1)  # (b, n)
    ds = np.diff(disc_s, axis=1)

    tape = TrajectoryTape()
    tape.batch_size = b
    tape.stack = stack
    tape.gamma = gamma

    u_prev = np.zeros(b)
    total = np.zeros(b)
    for m in range(n):
        x = stack._features(m, prices[:, m], calls[:, m], deltas[:, m], u_prev)
        raw, net_tape = stack.nets[m].forward(x, mode=mode, rng=rng)
        u, dchain, draw = stack._apply(raw[:, 0], u_prev)
        d_h = u - u_prev
        tc_grad_base = dfs[m] * cfg.alpha * prices[: , m]
        tc = tc_grad_base * (np.abs(d_h) + cfg.beta * d_h**2)
        pnl = option_leg[:, m] + u * ds[:, m] - tc
        unwind_grad = None
        if m == n - 1 and cfg.settle_unwind:
            base = dfs[n] * cfg.alpha * prices[:, n]
            pnl = pnl - base * (np.abs(u) + cfg.beta * u**2)
            unwind_grad = base * (np.sign(u) + 2.0 * cfg.beta * u)
        if not np.all(np.isfinite(pnl)):
            bad = int(np.argmax(~np.isfinite(pnl)))
            raise RuntimeError(
                f"non-finite cost on path {bad} at step {m} "
                f"(stock={prices[bad, m]:.4g}, holding={u[bad]:.4g})"
            )
        cost = -pnl + 0.5 * cfg.lambda_ra * pnl**2
        total += gamma**m * cost
        tape.steps.append({
            "net_tape": net_tape,
            "pnl": pnl,
            "d_pnl_d_u": ds[:, m] - tc_grad_base * (np.sign(d_h) + 2.0 * cfg.beta * d_h)
                          - (unwind_grad if unwind_grad is not None else 0.0),
            "tc_prime": tc_grad_base * (np.sign(d_h) + 2.0 * cfg.beta * d_h),
            "dchain": dchain,
            "draw": draw,
        })
        u_prev = u
    return float(total.mean()), tape


def backward_through_trajectory(tape: TrajectoryTape) -> list[list[np.ndarray]]:
    """Exact gradients of the batch-mean loss for every network in the stack.

    Adjoint recursion over holdings: each step's holding enters its own pnl,
    the next step's transaction cost, the next step's rebalancing base (rate
    mode), and the next step's input features.
    """
    if tape.consumed:
        raise RuntimeError("trajectory tape already consumed")
    tape.consumed = True
    stack = tape.stack
    mult = stack.env_cfg.contract_multiplier
    b = tape.batch_size
    gamma = tape.gamma
    hold_col = stack.nets[0].in_dim - 1  # holding is the last feature
    grads: list[list[np.ndarray] | None] = [None] * len(tape.steps)
    carry = np.zeros(b)
    for m in range(len(tape.steps) - 1, -1, -1):
        step = tape.steps[m]
        w = gamma**m * (-1.0 + stack.env_cfg.lambda_ra * step["pnl"]) / b
        g_u = w * step["d_pnl_d_u"] + carry
        dy = g_u * step["draw"]
        net_grads, dx = stack.nets[m].backward(step["net_tape"], dy[:, None])
        grads[m] = net_grads
        carry = w * step["tc_prime"] + g_u * step["dchain"] + dx[:, hold_col] / mult
    return grads


def train_mvh(config: MvhTrainConfig, env_cfg: EnvConfig, seed: int,
              progress=None) -> tuple[PolicyStack, np.ndarray]:
    """Joint training of all step policies on fresh shock batches.

    Returns the stack and the per-epoch mean training loss. Raises
    TrainingDiverged (carrying the last epoch's stack) if the loss explodes.
    """
    stack = PolicyStack.build(env_cfg, config, substream(seed, INIT_DOMAIN))
    adam = AdamState(stack.params(), lr=config.lr)
    shuffle_rng = substream(seed, SHUFFLE_DOMAIN)
    dropout_rng = substream(seed, DROPOUT_DOMAIN) if config.dropout > 0 else None
    n = env_cfg.grid.n_steps
    curve = np.empty(config.epochs)
    last_good: list[np.ndarray] | None = None
    for epoch in range(config.epochs):
        adam.lr = config.lr * 0.5 ** (epoch // config.lr_halve_every)
        shocks = np.empty((config.samples_per_epoch, n))
        base = epoch * config.samples_per_epoch
        for i in range(config.samples_per_epoch):
            shocks[i] = substream(seed, TRAIN_DOMAIN, base + i).standard_normal(n)
        order = shuffle_rng.permutation(config.samples_per_epoch)
        losses = []
        for lo in range(0, config.samples_per_epoch, config.minibatch):
            rows = order[lo:lo + config.minibatch]
            try:
                loss, tape = rollout_loss(stack, shocks[rows], env_cfg,
                                          gamma=config.gamma, mode="train",
                                          rng=dropout_rng)
            except RuntimeError as err:
                if last_good is not None:
                    stack.restore(last_good)
                raise TrainingDiverged(
                    f"rollout failed at epoch {epoch}: {err}", stack
                ) from err
            if not math.isfinite(loss) or loss > 1e6:
                if last_good is not None:
                    stack.restore(last_good)
                raise TrainingDiverged(
                    f"loss {loss:.3g} at epoch {epoch}; restored last epoch", stack
                )
            grads = backward_through_trajectory(tape)
            flat = []
            for g in grads:
                flat.extend(g)
            adam.step(stack.params(), flat)
            losses.append(loss)
        curve[epoch] = float(np.mean(losses))
        last_good = stack.snapshot()
        if progress is not None:
            progress(epoch, curve[epoch])
    return stack, curve
