"""Smoothing methods for nonsmooth objectives and estimation of their gradient limit fields."""

__version__ = "0.1.0"

from .expr import SmoothingFamily, builtin_family, eval, grad  # noqa: E402,A004
from .field import (  # noqa: E402
    EstimatorConfig,
    LimitFieldEstimate,
    criticality_certificate,
    estimate_limit_field,
    gradient_consistency_scan,
    verify_path_integral,
)
from .hull import min_norm_point  # noqa: E402
from .solver import Schedule, SolverTrace, certify_final, smoothing_solve  # noqa: E402

__all__ = [
    "EstimatorConfig",
    "LimitFieldEstimate",
    "Schedule",
    "SmoothingFamily",
    "SolverTrace",
    "builtin_family",
    "certify_final",
    "criticality_certificate",
    "estimate_limit_field",
    "eval",
    "grad",
    "gradient_consistency_scan",
    "min_norm_point",
    "smoothing_solve",
    "verify_path_integral",
]
