"""Hedged-portfolio MDP: self-financing P&L, transaction costs, stepwise cost.

All P&L is book-kept in values discounted to time 0, so the stepwise increment
needs no explicit bank account:

    pnl_i = H_opt * mult * (C~_{i+1} - C~_i) + H_i * (S~_{i+1} - S~_i) - TC~_i

with X~ = exp(-r t) X. Transaction costs are a drag (subtracted). At maturity
the call settles at intrinsic value and, when ``settle_unwind`` is on, the
residual stock position is liquidated with a final cost folded into the last
step. Stepwise cost is c = -pnl + (lambda/2) pnl^2 and reward = -c.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .market import MarketParams, TradingGrid, TEST_DOMAIN, substream
from .pricing import OptionSpec, call_price_delta

FEATURE_NAMES = ("time", "stock", "option_price", "delta", "holding")


@dataclass(frozen=True)
class EnvConfig:
    market: MarketParams
    option: OptionSpec
    grid: TradingGrid
    alpha: float = 0.01
    beta: float = 0.01
    lambda_ra: float = 0.1
    option_holding: float = -1.0
    contract_multiplier: float = 100.0
    gamma_discount: float = 0.99
    settle_unwind: bool = True
    # Holding bounds in shares; None means [-0.2, 1.2] * contract_multiplier.
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.alpha < 0.0 or self.beta < 0.0 or self.lambda_ra < 0.0:
            raise ValueError("alpha, beta, lambda_ra must be >= 0")
        if self.contract_multiplier < 1.0:
            raise ValueError("contract_multiplier must be >= 1")
        if abs(self.grid.horizon - self.option.maturity) > 1e-12:
            raise ValueError("trading grid must span the option maturity")

    @property
    def holding_bounds(self) -> tuple[float, float]:
        if self.bounds is not None:
            return self.bounds
        return (-0.2 * self.contract_multiplier, 1.2 * self.contract_multiplier)


@dataclass(frozen=True)
class HedgeState:
    """Agent observation: one row of the 5-feature state space."""

    step_index: int
    time: float
    stock: float
    option_price: float
    delta: float
    holding: float


@dataclass(frozen=True)
class StepOutcome:
    next: HedgeState
    pnl: float
    tc: float
    cost: float
    reward: float
    done: bool


@dataclass
class EpisodeRecord:
    states: list  # n_steps + 1 HedgeStates (initial state first)
    actions: np.ndarray  # holdings chosen at steps 0..n-1
    pnls: np.ndarray
    tcs: np.ndarray
    costs: np.ndarray
    total_hedge_cost: float  # -sum(pnl); positive = loss
    total_tc: float = 0.0


def transaction_cost(s, d_h, alpha: float, beta: float):
    """Friction alpha * s * (|d_h| + beta * d_h^2); zero only for d_h = 0."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0.0):
        raise ValueError("price must be > 0")
    d_h = np.asarray(d_h, dtype=float)
    out = alpha * s * (np.abs(d_h) + beta * d_h**2)
    return float(out) if out.ndim == 0 else out


def make_state(cfg: EnvConfig, step_index: int, stock: float, holding: float) -> HedgeState:
    t = step_index * cfg.grid.dt
    tau = cfg.option.maturity - t
    tau = 0.0 if tau < 1e-14 else tau
    c, d = call_price_delta(float(stock), cfg.option.strike, tau,
                            cfg.market.sigma, cfg.market.rate)
    return HedgeState(step_index, t, float(stock), c, d, float(holding))


def _tc(s: float, d_h: float, alpha: float, beta: float) -> float:
    return alpha * s * (abs(d_h) + beta * d_h * d_h)


def env_step(cfg: EnvConfig, state: HedgeState, new_holding: float, shock: float) -> StepOutcome:
    """Trade to ``new_holding`` at the current price, evolve one period.

    ``shock`` is the standard normal driving the period's stock move.
    """
    n = cfg.grid.n_steps
    if state.step_index >= n:
        raise RuntimeError("step() called on a terminal state")
    if not (math.isfinite(new_holding) and math.isfinite(shock)):
        raise ValueError("non-finite action or shock")
    dt = cfg.grid.dt
    mkt = cfg.market
    df_now = math.exp(-mkt.rate * state.time)
    df_next = math.exp(-mkt.rate * (state.time + dt))

    d_h = new_holding - state.holding
    tc_now = _tc(state.stock, d_h, cfg.alpha, cfg.beta)

    # log-Euler stock step, same recursion as market.gbm_step
    s_next = state.stock * math.exp((mkt.mu - 0.5 * mkt.sigma**2) * dt
                                    + mkt.sigma * math.sqrt(dt) * shock)
    nxt = make_state(cfg, state.step_index + 1, s_next, new_holding)
    done = nxt.step_index == n

    mult = cfg.contract_multiplier
    pnl = (
        cfg.option_holding * mult * (df_next * nxt.option_price - df_now * state.option_price)
        + new_holding * (df_next * nxt.stock - df_now * state.stock)
        - df_now * tc_now
    )
    tc_total = tc_now
    if done and cfg.settle_unwind:
        tc_unwind = _tc(nxt.stock, -new_holding, cfg.alpha, cfg.beta)
        pnl -= df_next * tc_unwind
        tc_total += tc_unwind

    cost = -pnl + 0.5 * cfg.lambda_ra * pnl**2
    return StepOutcome(next=nxt, pnl=pnl, tc=tc_total, cost=cost, reward=-cost, done=done)


class HedgingEnv:
    """Stateful convenience wrapper around :func:`env_step` for episodic agents."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.state: HedgeState | None = None

    def reset(self) -> HedgeState:
        self.state = make_state(self.cfg, 0, self.cfg.market.s0, 0.0)
        return self.state

    def step(self, new_holding: float, shock: float) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("reset() before step()")
        out = env_step(self.cfg, self.state, new_holding, shock)
        self.state = out.next
        return out


def episode_shocks(cfg: EnvConfig, seed: int, episode: int = 0, domain: int = TEST_DOMAIN) -> np.ndarray:
    """Standard-normal shock row for one episode from its own substream."""
    return substream(seed, domain, episode).standard_normal(cfg.grid.n_steps)


def rollout(
    cfg: EnvConfig,
    policy: Callable[[HedgeState], float],
    seed: int | None = None,
    episode: int = 0,
    domain: int = TEST_DOMAIN,
    shocks: np.ndarray | None = None,
) -> EpisodeRecord:
    """Run one full episode under ``policy`` and settle at maturity.

    Shocks come from the (seed, domain, episode) substream unless given
    explicitly. total_hedge_cost = -sum(pnl); positive values are losses.
    """
    if shocks is None:
        if seed is None:
            raise ValueError("rollout needs either a seed or explicit shocks")
        shocks = episode_shocks(cfg, seed, episode, domain)
    if len(shocks) != cfg.grid.n_steps:
        raise ValueError("shock row length must equal n_steps")
    env = HedgingEnv(cfg)
    state = env.reset()
    states = [state]
    n = cfg.grid.n_steps
    actions = np.empty(n)
    pnls = np.empty(n)
    tcs = np.empty(n)
    costs = np.empty(n)
    for i in range(n):
        a = float(policy(state))
        if not math.isfinite(a):
            raise RuntimeError(f"policy returned non-finite action at step {i}")
        out = env.step(a, float(shocks[i]))
        actions[i], pnls[i], tcs[i], costs[i] = a, out.pnl, out.tc, out.cost
        state = out.next
        states.append(state)
    return EpisodeRecord(
        states=states,
        actions=actions,
        pnls=pnls,
        tcs=tcs,
        costs=costs,
        total_hedge_cost=float(-pnls.sum()),
        total_tc=float(tcs.sum()),
    )


def delta_hedge_policy(state: HedgeState, cfg: EnvConfig) -> float:
    """Offsetting Delta position: -option_holding * multiplier * Delta shares."""
    return -cfg.option_holding * cfg.contract_multiplier * state.delta


def delta_hedger(cfg: EnvConfig) -> Callable[[HedgeState], float]:
    return lambda state: delta_hedge_policy(state, cfg)


def featurize(state: HedgeState, cfg: EnvConfig, include_delta: bool = True) -> np.ndarray:
    """Normalized feature vector [t/T, S/S0, C/S0, delta, H/mult]."""
    f = [
        state.time / cfg.option.maturity,
        state.stock / cfg.market.s0,
        state.option_price / cfg.market.s0,
        state.delta,
        state.holding / cfg.contract_multiplier,
    ]
    if not include_delta:
        del f[3]
    return np.array(f)


def feature_names(include_delta: bool = True) -> tuple[str, ...]:
    if include_delta:
        return FEATURE_NAMES
    return tuple(n for n in FEATURE_NAMES if n != "delta")


def raw_to_features(x: np.ndarray, cfg: EnvConfig, include_delta: bool = True) -> np.ndarray:
    """Normalize a matrix of raw state rows (time, stock, C, [delta,] holding)."""
    x = np.asarray(x, dtype=float)
    out = x.copy()
    out[:, 0] = x[:, 0] / cfg.option.maturity
    out[:, 1] = x[:, 1] / cfg.market.s0
    out[:, 2] = x[:, 2] / cfg.market.s0
    out[:, -1] = x[:, -1] / cfg.contract_multiplier
    return out


def squash_to_bounds(u, lo: float, hi: float):
    """Map an unbounded control to (lo, hi) via tanh; squash(0) is the midpoint."""
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    return mid + half * np.tanh(u)


def dump_episodes_csv(records: list[EpisodeRecord], path: str) -> None:
    """Write `episode,step,time,stock,option_price,delta,holding,pnl,tc,cost`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "step", "time", "stock", "option_price",
                         "delta", "holding", "pnl", "tc", "cost"])
        for e, rec in enumerate(records):
            for i in range(len(rec.actions)):
                s = rec.states[i]
                writer.writerow([
                    e, i, repr(s.time), repr(s.stock), repr(s.option_price),
                    repr(s.delta), repr(float(rec.actions[i])),
                    repr(float(rec.pnls[i])), repr(float(rec.tcs[i])),
                    repr(float(rec.costs[i])),
                ])
