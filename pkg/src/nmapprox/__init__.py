"""Negative multinomial distribution, its Gaussian approximation and rate experiments."""

from .distribution import (
    DerivedParams,
    ModelParams,
    derive,
    jitter,
    log_pmf,
    marginal_params,
    sample,
    truncated_total_mass,
)
from .divergences import (
    DivergenceEstimate,
    GaussianSpec,
    hellinger_gaussians,
    hellinger_jittered_vs_gaussian,
    matched_gaussian,
    tv_jittered_vs_gaussian,
)
from .errors import (
    BudgetExceededError,
    InvalidParameterError,
    NMApproxError,
    NumericalError,
    OutOfBulkError,
    UnsupportedMomentError,
)
from .expansion import BulkSpec, correction_F, correction_S, evaluate_expansion, residual_sweep
from .lecam import (
    DeficiencyEstimate,
    ExperimentFamily,
    ParameterSet,
    deficiency_upper,
    kernel_T1_star,
    kernel_T2_star,
    stabilized_distance_check,
    theta_grid,
)
from .moments import MomentIndex, brute_force_moment, central_moment_formula
from .rates import RateFitResult, fit_rate

__version__ = "0.1.0"

__all__ = [
    "BudgetExceededError",
    "BulkSpec",
    "DeficiencyEstimate",
    "DerivedParams",
    "DivergenceEstimate",
    "ExperimentFamily",
    "GaussianSpec",
    "InvalidParameterError",
    "ModelParams",
    "MomentIndex",
    "NMApproxError",
    "NumericalError",
    "OutOfBulkError",
    "ParameterSet",
    "RateFitResult",
    "UnsupportedMomentError",
    "brute_force_moment",
    "central_moment_formula",
    "correction_F",
    "correction_S",
    "deficiency_upper",
    "derive",
    "evaluate_expansion",
    "fit_rate",
    "hellinger_gaussians",
    "hellinger_jittered_vs_gaussian",
    "jitter",
    "kernel_T1_star",
    "kernel_T2_star",
    "log_pmf",
    "marginal_params",
    "matched_gaussian",
    "residual_sweep",
    "sample",
    "stabilized_distance_check",
    "theta_grid",
    "truncated_total_mass",
    "tv_jittered_vs_gaussian",
]
