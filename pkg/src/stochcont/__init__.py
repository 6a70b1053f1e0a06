"""Stochastic continuity equations on closed Riemannian manifolds.

Chart-based geometry, elliptic noise frames, stochastic-characteristics
solvers, parabolic duality test functions and the L2-moment experiments.
"""

import jax

# every geometric kernel is evaluated in double precision
jax.config.update("jax_enable_x64", True)

from .geometry import (  # noqa: E402
    DomainError,
    FlatTorus,
    NumericError,
    RoundSphere,
    ScalarField,
    VectorField,
    build_atlas,
)

from .dual_parabolic import DualProblem, GridField, anisotropic_norm, bound_report, solve_cauchy, solve_terminal  # noqa: E402
from .noise_frames import NoiseFrame, build_frame  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "DualProblem",
    "GridField",
    "NoiseFrame",
    "anisotropic_norm",
    "bound_report",
    "build_frame",
    "solve_cauchy",
    "solve_terminal",
    "FlatTorus",
    "NumericError",
    "RoundSphere",
    "ScalarField",
    "VectorField",
    "build_atlas",
    "__version__",
]
