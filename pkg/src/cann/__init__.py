"""Risk-constrained online portfolio selection.

Nearest-neighbor saddle-point experts, aggregated by twin exponential
weights, choose daily leveraged long/short portfolios whose conditional
value at risk is pushed below a configured budget. Benchmarks, synthetic
stationary-ergodic market generators and a batch backtesting CLI round out
the package.
"""

__version__ = "0.1.0"

from .market import MarketConfig, default_leverage, load_prices, to_relative, transform
from .objective import (RiskConfig, compute_lambda_max, compute_m, daily_return,
                        inst_lagrangian, omega, project_simplex, regularized_loss)
from .cvar import CvarResult, cvar_discrete, cvar_ru_minimize, cvar_tail_oracle, phi_empirical
from .experts import (ExpertPool, NeighborSchedule, SaddleResult, SolverParams,
                      expert_predict, matched_set, regularizer_weight, solve_saddle)
from .aggregator import Aggregator, ExpertLedger, RunReport, run, weights
from .synthetic import (AssetDist, MarkovMarketSpec, conditional_cvar, gen_iid,
                        gen_markov, stationary_distribution, true_optimum)
from . import benchmarks

__all__ = [
    "MarketConfig", "default_leverage", "load_prices", "to_relative", "transform",
    "RiskConfig", "compute_lambda_max", "compute_m", "daily_return",
    "inst_lagrangian", "omega", "project_simplex", "regularized_loss",
    "CvarResult", "cvar_discrete", "cvar_ru_minimize", "cvar_tail_oracle",
    "phi_empirical",
    "ExpertPool", "NeighborSchedule", "SaddleResult", "SolverParams",
    "expert_predict", "matched_set", "regularizer_weight", "solve_saddle",
    "Aggregator", "ExpertLedger", "RunReport", "run", "weights",
    "AssetDist", "MarkovMarketSpec", "conditional_cvar", "gen_iid", "gen_markov",
    "stationary_distribution", "true_optimum",
    "benchmarks",
]
