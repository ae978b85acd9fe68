"""Numerical laboratory for optimal stopping of diffusions.

The package prices American puts two independent ways (finite differences
with projected SOR on a log-price grid, and the perpetual closed form),
extracts and validates exercise boundaries, simulates stochastic flows with
pathwise derivatives, and cross-checks the analytic structure of the value
function near the boundary: smooth fit in space and time, boundary entry-time
regularity, and a local-time identity for the value gap.
"""
from .flowsim import (
    EstimateWithError,
    FlowPath,
    GbmParams,
    SdeSpec,
    default_local_time_bandwidth,
    gbm_local_time_mc,
    gbm_unit_density,
    local_time_estimate,
    simulate_gbm_flow,
    simulate_sde_flow,
)
from .putsolver import (
    Boundary,
    ExtractionError,
    FdConfig,
    GeneratorResidual,
    PerpetualPut,
    ProblemSpec,
    SolverError,
    ValueGrid,
    binomial_exercise_frontier,
    extract_boundary,
    generator_residual,
    perpetual_put,
    perpetual_threshold_search,
    perpetual_threshold_value,
    price_put_binomial,
    price_put_fd,
)
from .diagnostics import (
    RegularityScan,
    StableBoundaryReport,
    StoppingTimeSample,
    green_scan,
    sample_entry_time,
    stable_boundary_check,
)
from .smoothfit import (
    DirectionalFitReport,
    LagrangeReport,
    LimitEstimate,
    LipschitzBoundReport,
    ResolutionError,
    directional_fit_check,
    lagrange_check,
    lipschitz_bound_check,
    lipschitz_constant,
    mc_value_estimate,
    space_fit_limit,
    time_fit_limit,
)

__version__ = "0.1.0"

__all__ = [
    "EstimateWithError",
    "FlowPath",
    "GbmParams",
    "SdeSpec",
    "default_local_time_bandwidth",
    "gbm_local_time_mc",
    "gbm_unit_density",
    "local_time_estimate",
    "simulate_gbm_flow",
    "simulate_sde_flow",
    "Boundary",
    "ExtractionError",
    "FdConfig",
    "GeneratorResidual",
    "PerpetualPut",
    "ProblemSpec",
    "SolverError",
    "ValueGrid",
    "binomial_exercise_frontier",
    "extract_boundary",
    "generator_residual",
    "perpetual_put",
    "perpetual_threshold_search",
    "perpetual_threshold_value",
    "price_put_binomial",
    "price_put_fd",
    "RegularityScan",
    "StableBoundaryReport",
    "StoppingTimeSample",
    "green_scan",
    "sample_entry_time",
    "stable_boundary_check",
    "DirectionalFitReport",
    "LagrangeReport",
    "LimitEstimate",
    "LipschitzBoundReport",
    "ResolutionError",
    "directional_fit_check",
    "lagrange_check",
    "lipschitz_bound_check",
    "lipschitz_constant",
    "mc_value_estimate",
    "space_fit_limit",
    "time_fit_limit",
    "__version__",
]
