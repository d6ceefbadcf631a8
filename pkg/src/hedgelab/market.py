"""Geometric-Brownian-motion market simulator on a fixed daily trading grid.

Paths are generated with per-path substreams (numpy SeedSequence spawn keys),
so path ``i`` of a batch is bit-identical regardless of how many paths are
requested and which stream domain (train/test/...) it belongs to.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

# Substream domains. Train and test draws never share a spawn key.
TRAIN_DOMAIN = 0
TEST_DOMAIN = 1
EXPLAIN_DOMAIN = 2
INIT_DOMAIN = 10
NOISE_DOMAIN = 11
SHUFFLE_DOMAIN = 12
DROPOUT_DOMAIN = 13

DAYS_PER_YEAR = 365.0


@dataclass(frozen=True)
class MarketParams:
    """GBM world: annualized drift, volatility, risk-free rate, and spot."""

    mu: float
    sigma: float
    rate: float
    s0: float

    def __post_init__(self):
        if not np.isfinite([self.mu, self.sigma, self.rate, self.s0]).all():
            raise ValueError("market parameters must be finite")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.s0 <= 0.0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")


@dataclass(frozen=True)
class TradingGrid:
    """Equally spaced trading times 0, dt, 2*dt, ..., n_steps*dt (years)."""

    n_steps: int
    dt: float

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be > 0")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @classmethod
    def daily(cls, n_days: int) -> "TradingGrid":
        """One trading step per calendar day, dt = 1/365 years."""
        return cls(n_steps=n_days, dt=1.0 / DAYS_PER_YEAR)


@dataclass(frozen=True)
class PathBatch:
    """Simulated stock paths plus the standard-normal shocks that drove them."""

    prices: np.ndarray  # (n_paths, n_steps + 1)
    shocks: np.ndarray  # (n_paths, n_steps)
    seed: tuple  # (seed, domain, start_index) reproducibility token

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...); stable across batch sizes."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def gbm_step(s, dt: float, dw, p: MarketParams):
    """One log-Euler step: s * exp((mu - sigma^2/2) dt + sigma dw).

    ``dw`` is the Brownian increment, i.e. sqrt(dt) times a standard normal.
    Exact in distribution for constant-parameter GBM. Accepts arrays.
    """
    s = np.asarray(s, dtype=float)
    dw = np.asarray(dw, dtype=float)
    if not (np.all(np.isfinite(s)) and np.isfinite(dt) and np.all(np.isfinite(dw))):
        raise ValueError("gbm_step requires finite inputs")
    if np.any(s <= 0.0) or dt <= 0.0:
        raise ValueError("gbm_step requires s > 0 and dt > 0")
    out = s * np.exp((p.mu - 0.5 * p.sigma**2) * dt + p.sigma * dw)
    return float(out) if out.ndim == 0 else out


def simulate_paths(
    n_paths: int,
    grid: TradingGrid,
    p: MarketParams,
    seed: int,
    domain: int = TRAIN_DOMAIN,
    start_index: int = 0,
) -> PathBatch:
    """Simulate ``n_paths`` GBM paths on the grid.

    Path ``i`` draws from substream (seed, domain, start_index + i), so the
    same path index always yields the same path no matter the batch size.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    shocks = np.empty((n_paths, grid.n_steps))
    for i in range(n_paths):
        rng = substream(seed, domain, start_index + i)
        shocks[i] = rng.standard_normal(grid.n_steps)
    prices = prices_from_shocks(shocks, grid, p)
    return PathBatch(prices=prices, shocks=shocks, seed=(seed, domain, start_index))


def prices_from_shocks(shocks: np.ndarray, grid: TradingGrid, p: MarketParams) -> np.ndarray:
    """Apply the log-Euler recursion to a (n_paths, n_steps) shock matrix."""
    drift = (p.mu - 0.5 * p.sigma**2) * grid.dt
    vol = p.sigma * np.sqrt(grid.dt)
    log_incr = drift + vol * shocks
    log_paths = np.cumsum(log_incr, axis=1)
    prices = np.empty((shocks.shape[0], grid.n_steps + 1))
    prices[:, 0] = p.s0
    prices[:, 1:] = p.s0 * np.exp(log_paths)
    return prices


def discount_factor(rate: float, t) -> float | np.ndarray:
    """exp(-rate * t); equals 1 for rate = 0."""
    if np.any(np.asarray(t) < 0.0):
        raise ValueError("discount_factor requires t >= 0")
    out = np.exp(-rate * np.asarray(t, dtype=float))
    return float(out) if out.ndim == 0 else out


def dump_paths_csv(batch: PathBatch, grid: TradingGrid, path: str) -> None:
    """Write `path_id,step,time,price` rows, one per (path, grid point)."""
    times = grid.times
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "step", "time", "price"])
        for i in range(batch.n_paths):
            for j in range(grid.n_steps + 1):
                writer.writerow([i, j, repr(float(times[j])), repr(float(batch.prices[i, j]))])
