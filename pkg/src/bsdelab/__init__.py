"""Numerical laboratory for singular-terminal BSDEs and exit-time densities."""

from bsdelab.model import (
    BoundaryCurve,
    DomainFlow,
    DriverDescriptor,
    ForwardModel,
    JumpSpec,
    PiecewiseConstant,
    TerminalDescriptor,
    TimeGrid,
    ValidationReport,
    validate_model,
    y_infinity,
    y_truncated_ode,
)
from bsdelab.forward import PathBundle, SeedRecord, detect_exit, empirical_exit_cdf, simulate_paths
from bsdelab.solver import (
    BackwardSolution,
    RegressionSpec,
    conditional_expectation,
    minimal_supersolution_ladder,
    solve_truncated,
    truncated_terminal,
)
from bsdelab.singular import (
    AprioriBoundParams,
    IntegrabilityReport,
    apriori_bound,
    continuity_profile,
    integrability_check_xi1,
    kappa_exponent,
    pasted_solution_xi1,
    sandwich_xi1,
    upper_bound_process_xi1,
    xi2_sandwich,
)
from bsdelab.density import (
    DensityEstimate,
    PdeGrid,
    bm_exit_series,
    density_mc,
    survival_pde,
)

__all__ = [
    "BoundaryCurve",
    "DomainFlow",
    "DriverDescriptor",
    "ForwardModel",
    "JumpSpec",
    "PiecewiseConstant",
    "TerminalDescriptor",
    "TimeGrid",
    "ValidationReport",
    "validate_model",
    "y_infinity",
    "y_truncated_ode",
    "PathBundle",
    "SeedRecord",
    "detect_exit",
    "empirical_exit_cdf",
    "simulate_paths",
    "BackwardSolution",
    "RegressionSpec",
    "conditional_expectation",
    "minimal_supersolution_ladder",
    "solve_truncated",
    "truncated_terminal",
    "AprioriBoundParams",
    "IntegrabilityReport",
    "apriori_bound",
    "continuity_profile",
    "integrability_check_xi1",
    "kappa_exponent",
    "pasted_solution_xi1",
    "sandwich_xi1",
    "upper_bound_process_xi1",
    "xi2_sandwich",
    "DensityEstimate",
    "PdeGrid",
    "bm_exit_series",
    "density_mc",
    "survival_pde",
]
