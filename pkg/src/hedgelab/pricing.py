"""Black-Scholes book-keeping model for the hedged European call.

The call is marked with the standard mu-free Black-Scholes formula; price and
Delta double as environment features. At expiry (tau = 0) the price is the
intrinsic payoff and Delta is the in-the-money indicator (0.5 at the strike).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class OptionSpec:
    """European call contract terms (maturity in years)."""

    strike: float
    maturity: float
    call_put: str = "call"

    def __post_init__(self):
        if self.strike <= 0.0:
            raise ValueError("strike must be > 0")
        if self.maturity <= 0.0:
            raise ValueError("maturity must be > 0")
        if self.call_put != "call":
            raise ValueError("only calls are supported")


def norm_cdf(x):
    """Standard normal CDF via the erf route (abs error well below 1e-12)."""
    out = ndtr(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def _d1_d2(s, strike, tau, sigma, rate):
    sig_sqrt = sigma * np.sqrt(tau)
    d1 = (np.log(s / strike) + (rate + 0.5 * sigma**2) * tau) / sig_sqrt
    return d1, d1 - sig_sqrt


def _ncdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / _SQRT2))


def call_price_delta(s: float, strike: float, tau: float, sigma: float, rate: float) -> tuple[float, float]:
    """Scalar (price, delta) sharing one d1 evaluation; hot path for stepping."""
    if s <= 0.0:
        raise ValueError("spot must be > 0")
    if tau < 0.0:
        raise ValueError("tau must be >= 0")
    if tau == 0.0:
        price = max(s - strike, 0.0)
        delta = 1.0 if s > strike else (0.5 if s == strike else 0.0)
        return price, delta
    if sigma <= 0.0:
        fwd = s * math.exp(rate * tau)
        price = math.exp(-rate * tau) * max(fwd - strike, 0.0)
        delta = 1.0 if fwd > strike else (0.5 if fwd == strike else 0.0)
        return price, delta
    sig_sqrt = sigma * math.sqrt(tau)
    d1 = (math.log(s / strike) + (rate + 0.5 * sigma**2) * tau) / sig_sqrt
    nd1 = _ncdf(d1)
    price = s * nd1 - strike * math.exp(-rate * tau) * _ncdf(d1 - sig_sqrt)
    return price, nd1


def bs_call_price(s, spec: OptionSpec, tau, sigma: float, rate: float):
    """Call price S N(d1) - K e^{-r tau} N(d2); intrinsic payoff at tau = 0.

    Vectorized over ``s`` and ``tau`` (broadcast together).
    """
    scalar = np.isscalar(s) and np.isscalar(tau)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(s <= 0.0):
        raise ValueError("spot must be > 0")
    if np.any(tau < 0.0):
        raise ValueError("tau must be >= 0")
    s, tau = np.broadcast_arrays(s, tau)
    out = np.maximum(s - spec.strike, 0.0).astype(float)
    live = tau > 0.0
    if np.any(live):
        sl, tl = s[live], tau[live]
        if sigma <= 0.0:
            fwd = sl * np.exp(rate * tl)
            out[live] = np.exp(-rate * tl) * np.maximum(fwd - spec.strike, 0.0)
        else:
            d1, d2 = _d1_d2(sl, spec.strike, tl, sigma, rate)
            out[live] = sl * ndtr(d1) - spec.strike * np.exp(-rate * tl) * ndtr(d2)
    return float(out[0]) if scalar else out


def bs_call_delta(s, spec: OptionSpec, tau, sigma: float, rate: float):
    """Call Delta N(d1) in [0, 1]; at tau = 0 the ITM indicator, 0.5 at S = K."""
    scalar = np.isscalar(s) and np.isscalar(tau)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(s <= 0.0):
        raise ValueError("spot must be > 0")
    if np.any(tau < 0.0):
        raise ValueError("tau must be >= 0")
    s, tau = np.broadcast_arrays(s, tau)
    out = np.where(s > spec.strike, 1.0, np.where(s == spec.strike, 0.5, 0.0))
    live = tau > 0.0
    if np.any(live):
        sl, tl = s[live], tau[live]
        if sigma <= 0.0:
            fwd = sl * np.exp(rate * tl)
            out[live] = np.where(fwd > spec.strike, 1.0, np.where(fwd == spec.strike, 0.5, 0.0))
        else:
            d1, _ = _d1_d2(sl, spec.strike, tl, sigma, rate)
            out[live] = ndtr(d1)
    return float(out[0]) if scalar else out
