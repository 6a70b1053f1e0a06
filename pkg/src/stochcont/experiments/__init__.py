"""Truncations, Monte-Carlo moments, duality pairings and the concentration study."""

from .checks import frame_checks, smoothing_checks
from .concentration import ConcentrationReport, concentration_experiment, relative_spread
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .duality import DualityReport, duality_check
from .fast_torus import AdditiveNoiseTorusSolver, bspline_matrix
from .moments import FitError, GronwallFit, MomentSeries, gronwall_fit, l2_moment, run_moments
from .report import RunReport, table_to_csv, write_outputs
from .truncation import (
    SuiteTable,
    TruncationFamily,
    build_truncation,
    profile_constants,
    truncation_property_suite,
)
from .velocity import (
    CappedSinkVelocity,
    ShearVelocity,
    SinFlowVelocity,
    capped_sink_for_grid,
    divergence_norms,
    velocity_from_config,
)

__all__ = [
    "AdditiveNoiseTorusSolver",
    "CappedSinkVelocity",
    "ConcentrationReport",
    "ConfigError",
    "DualityReport",
    "ExperimentConfig",
    "FitError",
    "GronwallFit",
    "MomentSeries",
    "RunReport",
    "ShearVelocity",
    "SinFlowVelocity",
    "SuiteTable",
    "TruncationFamily",
    "bspline_matrix",
    "build_truncation",
    "capped_sink_for_grid",
    "concentration_experiment",
    "divergence_norms",
    "duality_check",
    "frame_checks",
    "gronwall_fit",
    "l2_moment",
    "load_config",
    "parse_config",
    "profile_constants",
    "relative_spread",
    "run_moments",
    "smoothing_checks",
    "table_to_csv",
    "truncation_property_suite",
    "velocity_from_config",
    "write_outputs",
]
