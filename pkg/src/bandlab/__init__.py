"""Rebalancing bands for a Merton investor facing small fixed and proportional costs."""

from .band_policy import (
    BalanceSolution,
    BandPolicy,
    ConvergenceError,
    CostCoefficients,
    CostParams,
    asymptotic_bands,
    cost_rate,
    density_cdf,
    density_combined,
    drift_shift_fixed,
    foc_residual,
    hit_rate,
    optimal_band_fixed,
    optimize_bands,
    second_moment,
    solve_omega,
)
from .expansion import expansion_consistency, solve_free_boundary
from .frictionless import CrraUtility, MarketParams, MertonSolution, pde_residual
from .simulation import BandSchedule, ContinuousRebalance, SimConfig, simulate, simulate_path

__version__ = "0.1.0"

__all__ = [
    "BalanceSolution", "BandPolicy", "BandSchedule", "ContinuousRebalance", "ConvergenceError",
    "CostCoefficients", "CostParams", "CrraUtility", "MarketParams", "MertonSolution", "SimConfig",
    "asymptotic_bands", "cost_rate", "density_cdf", "density_combined", "drift_shift_fixed",
    "expansion_consistency", "foc_residual", "hit_rate", "optimal_band_fixed", "optimize_bands",
    "pde_residual", "second_moment", "simulate", "simulate_path", "solve_free_boundary", "solve_omega",
]
