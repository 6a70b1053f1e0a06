"""Pathwise simulation of the stochastic continuity equation."""

from .brownian import BrownianPaths, n_steps_for, sample_brownian
from .characteristics import (
    ConcentrationOverflow,
    FieldVelocity,
    OverflowEvent,
    ParticleEnsemble,
    Velocity,
    ZeroVelocity,
    as_velocity,
    evolve_characteristics,
    exponent_increment,
    particle_step,
    strat_step,
    switch_charts,
)
from .grids import SphereGrid, TorusGrid, build_grid
from .residuals import (
    IdentityRenormalization,
    renormalized_residual,
    sample_terms,
    stratonovich_residual,
    weak_residual,
)
from .solver import DensityState, Trajectory, pathwise_solve, semi_lagrangian_step

__all__ = [
    "BrownianPaths",
    "ConcentrationOverflow",
    "DensityState",
    "FieldVelocity",
    "IdentityRenormalization",
    "OverflowEvent",
    "ParticleEnsemble",
    "SphereGrid",
    "TorusGrid",
    "Trajectory",
    "Velocity",
    "ZeroVelocity",
    "as_velocity",
    "build_grid",
    "evolve_characteristics",
    "exponent_increment",
    "n_steps_for",
    "particle_step",
    "pathwise_solve",
    "renormalized_residual",
    "sample_brownian",
    "sample_terms",
    "semi_lagrangian_step",
    "strat_step",
    "stratonovich_residual",
    "switch_charts",
    "weak_residual",
]
