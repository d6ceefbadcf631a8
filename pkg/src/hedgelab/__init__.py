"""Hedging research lab: Delta hedge, DDPG, and deep trajectory-control agents
on stepwise mean-variance hedging of a European call with transaction costs."""

from .market import MarketParams, PathBatch, TradingGrid, discount_factor, gbm_step, simulate_paths
from .pricing import OptionSpec, bs_call_delta, bs_call_price, norm_cdf
from .env import (
    EnvConfig,
    HedgeState,
    HedgingEnv,
    StepOutcome,
    delta_hedge_policy,
    delta_hedger,
    rollout,
    transaction_cost,
)

__version__ = "0.1.0"

__all__ = [
    "MarketParams", "TradingGrid", "PathBatch", "gbm_step", "simulate_paths",
    "discount_factor", "OptionSpec", "norm_cdf", "bs_call_price", "bs_call_delta",
    "EnvConfig", "HedgeState", "StepOutcome", "HedgingEnv", "transaction_cost",
    "rollout", "delta_hedge_policy", "delta_hedger", "__version__",
]
