"""Optimal local/remote control over lossy uplinks: synthesis, simulation,
and numerical verification."""

from ._backend import available_backends, default_backend
from .model import (GlobalMatrices, SystemSpec, ValidationReport,
                    assemble_global, extract_block, load_spec, make_spec,
                    spec_from_json, validate_spec)
from .simulator import (CostReport, LinearStrategy, TrajectoryRecord,
                        monte_carlo, optimal_strategy, random_strategy,
                        run_trajectory, simulate_ensemble, zero_strategy)
from .synthesis import RiccatiSchedule, gain_step, riccati_step, synthesize
from .theory import (decomposition_check, optimal_cost_closed_form,
                     orthogonality_check)
from .oracle import (centralized_lqr, exact_cost_enumerated,
                     quadratic_min_check, strategy_search)

__version__ = "0.1.0"

__all__ = [
    "GlobalMatrices", "SystemSpec", "ValidationReport", "assemble_global",
    "extract_block", "load_spec", "make_spec", "spec_from_json",
    "validate_spec", "CostReport", "LinearStrategy", "TrajectoryRecord",
    "monte_carlo", "optimal_strategy", "random_strategy", "run_trajectory",
    "simulate_ensemble", "zero_strategy", "RiccatiSchedule", "gain_step",
    "riccati_step", "synthesize", "decomposition_check",
    "optimal_cost_closed_form", "orthogonality_check", "centralized_lqr",
    "exact_cost_enumerated", "quadratic_min_check", "strategy_search",
    "available_backends", "default_backend", "__version__",
]
