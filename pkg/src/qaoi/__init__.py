"""Optimal request scheduling for query-time freshness over random-delay channels."""
from .delays import (
    DelayDistribution,
    QuantizedDelay,
    atomic,
    build_grids,
    parse_distribution,
    quantize,
    truncated_distribution,
)
from .kernels import BACKEND
from .penalty import PenaltyFunction, exponential, identity, parse_penalty
from .policy import (
    DecisionContext,
    Policy,
    next_request,
    pow_grid,
    uow_optimal_policy,
    uow_threshold,
    uow_time_average,
    zero_wait,
)
from .simulate import make_schedule, replicate, run
from .solver import RefinedSolution, SolverSolution, solve_refined, value_tables

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DecisionContext",
    "DelayDistribution",
    "PenaltyFunction",
    "Policy",
    "QuantizedDelay",
    "RefinedSolution",
    "SolverSolution",
    "atomic",
    "build_grids",
    "exponential",
    "identity",
    "make_schedule",
    "next_request",
    "parse_distribution",
    "parse_penalty",
    "pow_grid",
    "quantize",
    "replicate",
    "run",
    "solve_refined",
    "truncated_distribution",
    "uow_optimal_policy",
    "uow_threshold",
    "uow_time_average",
    "value_tables",
    "zero_wait",
]
