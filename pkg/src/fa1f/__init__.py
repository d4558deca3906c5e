"""Numerical laboratory for the one-spin facilitated Fredrickson-Andersen
model: equilibrium sampling, canonical paths, variational test functions,
Monte Carlo and exact estimators, event-driven simulation, and random-walk
meeting times."""

from .errors import (
    DegenerateEstimateError,
    FitError,
    NumericalError,
    PreconditionError,
    ResourceLimitError,
    StructuralError,
)
from .model import (
    Configuration,
    ConditionedSampler,
    EquilibriumSampler,
    Parameters,
    Volume,
    constraint,
    critical_length,
    dump_configuration,
    flip,
    load_configuration,
    sample_config,
    sample_config_conditioned,
)
from .montecarlo import (
    Estimate,
    ScalingSeries,
    estimate_dirichlet,
    estimate_mean,
    estimate_variance,
    fit_exponent,
    gap_upper_bound,
    tau0_lower_bound,
)
from .paths import ConfigPathStep, GeometricPath, canonical_path, cone, config_path, floor_alpha
from .testfunctions import (
    TestFunction,
    capped_log_distance,
    cluster_count,
    cluster_count_function,
    has_window_vacancy,
    log_distance_function,
    max_meeting_time,
    meeting_time_function,
    origin_function,
    origin_occupation,
    tent_function,
    vacancy_distance_tent,
    window_vacancy_function,
)

__version__ = "0.1.0"
