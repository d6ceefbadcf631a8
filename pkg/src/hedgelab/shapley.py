"""Exact Shapley attribution of policy actions to state features.

The value of a coalition S at instance x is the marginal expectation
E_b[f(x_S, b_{-S})] over a background sample, with the empty coalition giving
the base value E_b[f(b)]. Attributions use the classic weights
|S|! (p - |S| - 1)! / p! over all 2^p coalitions, enumerated exactly
(feasible for the 5-feature policy input), so efficiency holds to float
precision. Importance is the mean absolute attribution across instances.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EXACT_FEATURE_CAP = 12  # 2^p coalition enumeration cap


@dataclass
class ShapConfig:
    feature_names: tuple[str, ...]
    background: np.ndarray  # (n_background, p) in raw feature units

    def __post_init__(self):
        self.background = np.atleast_2d(np.asarray(self.background, dtype=float))
        p = len(self.feature_names)
        if self.background.shape[1] != p:
            raise ValueError("background width must match feature names")
        if self.background.shape[0] < 1:
            raise ValueError("background must be nonempty")
        if p > EXACT_FEATURE_CAP:
            raise ValueError(f"exact enumeration capped at {EXACT_FEATURE_CAP} features")


@dataclass
class ShapResult:
    phi: np.ndarray  # (n_instances, p)
    base_value: float
    feature_names: tuple[str, ...]


def coalition_value(f, x: np.ndarray, coalition, background: np.ndarray) -> float:
    """Mean of f over background rows with coalition features pinned to x."""
    background = np.atleast_2d(background)
    x = np.asarray(x, dtype=float)
    mask = np.zeros(background.shape[1], dtype=bool)
    for i in coalition:
        mask[i] = True
    rows = np.where(mask, x, background)
    return float(np.mean(f(rows)))


@lru_cache(maxsize=None)
def _shapley_plan(p: int):
    """For each feature i: arrays of (without, with) coalition ids and weights."""
    plan = []
    fact = [math.factorial(k) for k in range(p + 1)]
    for i in range(p):
        bit = 1 << i
        without, withs, weights = [], [], []
        for s in range(1 << p):
            if s & bit:
                continue
            k = bin(s).count("1")
            without.append(s)
            withs.append(s | bit)
            weights.append(fact[k] * fact[p - k - 1] / fact[p])
        plan.append((np.array(without), np.array(withs), np.array(weights)))
    return plan


def _coalition_values_all(f, x: np.ndarray, background: np.ndarray) -> np.ndarray:
    """v[s] for every coalition bitmask s, via one batched f evaluation."""
    p = background.shape[1]
    n_bg = background.shape[0]
    masks = (np.arange(1 << p)[:, None] >> np.arange(p)[None, :]) & 1  # (2^p, p)
    rows = np.where(masks[:, None, :].astype(bool), x[None, None, :],
                    background[None, :, :])
    flat = rows.reshape((1 << p) * n_bg, p)
    vals = np.asarray(f(flat), dtype=float).reshape(1 << p, n_bg)
    return vals.mean(axis=1)


def exact_shapley(f, x: np.ndarray, config: ShapConfig) -> np.ndarray:
    """Attribution vector phi with classic Shapley weights, exact over the
    background-mean value function."""
    x = np.asarray(x, dtype=float)
    p = len(config.feature_names)
    v = _coalition_values_all(f, x, config.background)
    phi = np.empty(p)
    for i, (without, with_, w) in enumerate(_shapley_plan(p)):
        phi[i] = float(np.sum(w * (v[with_] - v[without])))
    return phi


def shap_values(f, instances: np.ndarray, config: ShapConfig) -> ShapResult:
    """Exact attributions for each instance row."""
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    phi = np.vstack([exact_shapley(f, row, config) for row in instances])
    base = float(np.mean(f(config.background)))
    return ShapResult(phi=phi, base_value=base, feature_names=config.feature_names)


def shap_variable_importance(result: ShapResult) -> np.ndarray:
    """Mean absolute attribution per feature (nonnegative)."""
    if result.phi.shape[0] < 1:
        raise ValueError("need at least one instance")
    return np.abs(result.phi).mean(axis=0)


def per_step_heatmap(stack, step_states: list[np.ndarray], n_background: int,
                     n_instances: int, rng: np.random.Generator) -> np.ndarray:
    """Per-step SHAP variable importance of a policy stack.

    ``step_states[m]`` holds raw feature rows observed at step m; background
    and instances are subsampled from it per step.
    """
    from .env import feature_names

    names = feature_names(stack.include_delta)
    out = np.zeros((stack.n_steps, len(names)))
    for m in range(stack.n_steps):
        pool = np.atleast_2d(step_states[m])
        bg_idx = rng.choice(len(pool), size=min(n_background, len(pool)), replace=False)
        in_idx = rng.choice(len(pool), size=min(n_instances, len(pool)), replace=False)
        cfg = ShapConfig(feature_names=names, background=pool[bg_idx])
        res = shap_values(stack.step_policy_on_features(m), pool[in_idx], cfg)
        out[m] = shap_variable_importance(res)
    return out


def dump_shap_csv(result: ShapResult, path: str) -> None:
    """Write `instance,feature,phi` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance", "feature", "phi"])
        for i, row in enumerate(result.phi):
            for name, val in zip(result.feature_names, row):
                writer.writerow([i, name, repr(float(val))])


def dump_heatmap_csv(matrix: np.ndarray, names: tuple[str, ...], path: str) -> None:
    """Write `step,feature,importance` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "feature", "importance"])
        for m, row in enumerate(matrix):
            for name, val in zip(names, row):
                writer.writerow([m, name, repr(float(val))])
