"""Evaluation reports, sweep experiments, and training-stability bundles.

Evaluation draws episodes from the test substream domain, which never
collides with training draws. Sweeps reuse the same test seed in every cell,
so cells differing only in a cost parameter see identical stock paths
(common random numbers). Positive total hedging cost is a trader loss.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import skew

from . import __version__
from .env import EnvConfig, delta_hedger, rollout
from .market import MarketParams, TEST_DOMAIN, TradingGrid
from .pricing import OptionSpec
from .svg import curves_svg, histogram_svg

QUANTS = (0.01, 0.05, 0.25, 0.50, 0.75, 0.95, 0.99)

ENV_AXES = ("alpha", "lambda", "sigma", "maturity")
AGENT_AXES = ("gamma", "lr", "architecture")


@dataclass
class EvalReport:
    label: str
    n_episodes: int
    mean: float
    std: float
    skew: float
    quantiles: dict[float, float]
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    mean_tc: float


@dataclass
class SweepSpec:
    axis: str
    values: list
    strategies: list[str]
    seeds: list[int]
    episodes: int = 1000

    def __post_init__(self):
        if self.axis not in ENV_AXES + AGENT_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if not self.values:
            raise ValueError("sweep needs a nonempty value grid")
        if not self.strategies:
            raise ValueError("sweep needs at least one strategy")


def fd_bin_edges(data: np.ndarray, max_bins: int = 200) -> np.ndarray:
    """Freedman-Diaconis histogram edges with degenerate-data fallbacks."""
    data = np.asarray(data, dtype=float)
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        return np.array([lo - 0.5, hi + 0.5])
    q75, q25 = np.percentile(data, [75, 25])
    width = 2.0 * (q75 - q25) / len(data) ** (1.0 / 3.0)
    if width <= 0:
        n_bins = 10
    else:
        n_bins = min(max(int(math.ceil((hi - lo) / width)), 1), max_bins)
    return np.linspace(lo, hi, n_bins + 1)


def episode_costs(policy, env_cfg: EnvConfig, n_episodes: int, seed: int
                  ) -> tuple[np.ndarray, np.ndarray]:
    """(total hedging cost, total transaction cost) per test episode."""
    costs = np.empty(n_episodes)
    tcs = np.empty(n_episodes)
    for e in range(n_episodes):
        rec = rollout(env_cfg, policy, seed=seed, episode=e, domain=TEST_DOMAIN)
        costs[e] = rec.total_hedge_cost
        tcs[e] = rec.total_tc
    return costs, tcs


def report_from_costs(costs: np.ndarray, tcs: np.ndarray, label: str) -> EvalReport:
    edges = fd_bin_edges(costs)
    counts, _ = np.histogram(costs, bins=edges)
    spread = float(costs.std(ddof=1)) if len(costs) > 1 else 0.0
    return EvalReport(
        label=label,
        n_episodes=len(costs),
        mean=float(costs.mean()),
        std=spread,
        skew=float(skew(costs)) if len(costs) > 2 and spread > 0 else 0.0,
        quantiles={q: float(np.quantile(costs, q)) for q in QUANTS},
        hist_edges=edges,
        hist_counts=counts,
        mean_tc=float(tcs.mean()),
    )


def evaluate(policy, env_cfg: EnvConfig, n_episodes: int, seed: int,
             label: str = "strategy") -> EvalReport:
    """Distribution report of total hedging cost over fresh test episodes."""
    costs, tcs = episode_costs(policy, env_cfg, n_episodes, seed)
    return report_from_costs(costs, tcs, label)


def emit_histogram(report: EvalReport, path: str) -> None:
    """Deterministic SVG of the report's histogram."""
    if len(report.hist_counts) < 1:
        raise ValueError("report has no histogram bins")
    histogram_svg(report.hist_edges, report.hist_counts,
                  f"{report.label}: total hedging cost ({report.n_episodes} episodes)",
                  path)


def report_csv_row(report: EvalReport, prefix: list) -> list:
    row = list(prefix) + [
        report.n_episodes, repr(report.mean), repr(report.std), repr(report.skew),
    ]
    row += [repr(report.quantiles[q]) for q in QUANTS]
    row.append(repr(report.mean_tc))
    return row


REPORT_HEADER = ["n_episodes", "mean", "std", "skew",
                 "q01", "q05", "q25", "q50", "q75", "q95", "q99", "mean_tc"]


def apply_env_axis(env_cfg: EnvConfig, axis: str, value) -> EnvConfig:
    """Rebuild an EnvConfig with one swept environment parameter changed."""
    if axis == "alpha":
        kw = {"alpha": float(value)}
    elif axis == "lambda":
        kw = {"lambda_ra": float(value)}
    elif axis == "sigma":
        m = env_cfg.market
        return _replace_env(env_cfg, market=MarketParams(m.mu, float(value), m.rate, m.s0))
    elif axis == "maturity":
        days = int(value)
        return _replace_env(env_cfg,
                            option=OptionSpec(env_cfg.option.strike, days / 365.0),
                            grid=TradingGrid.daily(days))
    else:
        return env_cfg  # agent-side axis
    return _replace_env(env_cfg, **kw)


def _replace_env(cfg: EnvConfig, **kw) -> EnvConfig:
    base = dict(
        market=cfg.market, option=cfg.option, grid=cfg.grid, alpha=cfg.alpha,
        beta=cfg.beta, lambda_ra=cfg.lambda_ra, option_holding=cfg.option_holding,
        contract_multiplier=cfg.contract_multiplier, gamma_discount=cfg.gamma_discount,
        settle_unwind=cfg.settle_unwind, bounds=cfg.bounds,
    )
    base.update(kw)
    return EnvConfig(**base)


def run_sweep(spec: SweepSpec, base_env: EnvConfig, trainers: dict, out_dir: str
              ) -> list[dict]:
    """One EvalReport per (grid value, strategy, seed).

    ``trainers[name](env_cfg, seed, overrides)`` returns a frozen policy.
    Cell failures are recorded in the output rows and the sweep continues.
    Emits a long-format CSV plus one histogram SVG per successful cell.
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for value in spec.values:
        env_cell = apply_env_axis(base_env, spec.axis, value)
        overrides = {} if spec.axis in ENV_AXES else {spec.axis: value}
        for strategy in spec.strategies:
            for seed in spec.seeds:
                cell = {"axis": spec.axis, "value": value, "strategy": strategy,
                        "seed": seed}
                try:
                    policy = trainers[strategy](env_cell, seed, overrides)
                    label = f"{strategy} {spec.axis}={value}"
                    report = evaluate(policy, env_cell, spec.episodes, seed, label)
                    cell["report"] = report
                    cell["error"] = ""
                    svg_name = f"hist_{spec.axis}_{value}_{strategy}_seed{seed}.svg"
                    emit_histogram(report, os.path.join(out_dir, svg_name))
                except Exception as err:  # cell failure must not kill the sweep
                    cell["report"] = None
                    cell["error"] = f"{type(err).__name__}: {err}"
                rows.append(cell)
    path = os.path.join(out_dir, f"sweep_{spec.axis}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "strategy", "seed"] + REPORT_HEADER + ["error"])
        for cell in rows:
            prefix = [cell["axis"], cell["value"], cell["strategy"], cell["seed"]]
            if cell["report"] is None:
                writer.writerow(prefix + [""] * len(REPORT_HEADER) + [cell["error"]])
            else:
                writer.writerow(report_csv_row(cell["report"], prefix) + [cell["error"]])
    return rows


def training_stability(kind: str, seeds: list[int], train_fn, out_dir: str) -> dict:
    """Learning curves across seeds plus the end-of-training spread.

    ``train_fn(seed)`` returns the per-episode (or per-epoch) loss/reward
    curve. Requires at least two seeds.
    """
    if len(seeds) < 2:
        raise ValueError("training stability needs n_seeds >= 2")
    os.makedirs(out_dir, exist_ok=True)
    curves = {}
    for seed in seeds:
        curves[seed] = np.asarray(train_fn(seed), dtype=float)
    csv_path = os.path.join(out_dir, f"stability_{kind}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "step", "value"])
        for seed in seeds:
            for i, v in enumerate(curves[seed]):
                writer.writerow([seed, i, repr(float(v))])
    curves_svg({f"seed {s}": (np.arange(len(c)), c) for s, c in curves.items()},
               f"{kind}: learning curves across seeds",
               os.path.join(out_dir, f"stability_{kind}.svg"))
    finals = np.array([curves[s][-1] for s in seeds])
    return {
        "kind": kind,
        "seeds": list(seeds),
        "final_values": finals.tolist(),
        "final_spread": float(finals.max() - finals.min()),
        "csv": csv_path,
    }


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list[int]
    version: str = __version__
    outputs: list[str] = field(default_factory=list)
    wall_clock_sec: float = 0.0


def write_manifest(manifest: RunManifest, path: str) -> None:
    payload = {
        "command": manifest.command,
        "config": manifest.config,
        "seeds": manifest.seeds,
        "version": manifest.version,
        "outputs": sorted(manifest.outputs),
        "wall_clock_sec": manifest.wall_clock_sec,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def delta_strategy_trainer():
    """Trainer-shaped factory for the no-training Delta baseline."""
    return lambda env_cfg, seed, overrides: delta_hedger(env_cfg)
