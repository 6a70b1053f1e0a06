"""Self-checks shared by the command line and the acceptance suite."""

from __future__ import annotations

import jax.numpy as jnp
import numpy as np

from ..geometry import VectorField, build_atlas, quadrature_nodes
from ..noise_frames import (
    build_frame,
    ellipticity_residuals,
    polarization_error,
    psi_battery,
    section_identity_error,
)
from ..smoothing import TorusBasis, commutation_error, heat_smooth_scalar


def frame_checks(manifold: str, kind: str, samples: int = 1000, seed: int = 0, quad_n: int = 24) -> dict:
    """Section identity, polarization and ellipticity residual for one frame."""
    atlas = build_atlas(manifold)
    frame = build_frame(atlas, kind)
    rng = np.random.default_rng(seed)
    out = {
        "manifold": manifold, "frame": kind, "n_fields": frame.n_fields,
        "section_identity": section_identity_error(frame, rng, samples),
        "polarization": polarization_error(frame, rng, min(samples, 200)),
    }
    psis = psi_battery(atlas)
    worst = 0.0
    for block in quadrature_nodes(atlas, quad_n):
        worst = max(worst, float(np.max(ellipticity_residuals(frame, psis, block.chart, block.nodes))))
    out["ellipticity"] = worst
    return out


def torus_test_velocity(atlas) -> VectorField:
    """A non-gradient, non-solenoidal smooth field on T^2."""

    def local(chart, x, t):
        return jnp.stack([jnp.sin(x[0]) + 0.4 * jnp.cos(2 * x[1]), 0.6 * jnp.sin(x[0] + x[1]) + 0.3 * jnp.cos(x[1])])

    return VectorField(atlas, local, "test velocity")


def smoothing_checks(n: int = 64, tau: float = 0.05, levels: int = 6) -> dict:
    """Heat-semigroup properties on T^2 and the smoothing-error monotonicity in ``tau = 2^-k``."""
    atlas = build_atlas("torus2")
    basis = TorusBasis(n, 2)
    x = basis.nodes
    rough = np.sign(np.sin(x[:, 0])) * (1.0 + 0.5 * np.cos(3 * x[:, 1])) + 0.2 * np.abs(np.sin(5 * x[:, 1]))
    s, t = 0.5 * tau, tau
    two_step = heat_smooth_scalar(heat_smooth_scalar(rough, s, atlas, basis), t)
    one_step = heat_smooth_scalar(rough, s + t, atlas, basis)
    semigroup = float(np.max(np.abs(two_step.values - one_step.values)))
    sm = heat_smooth_scalar(rough, tau, atlas, basis)
    l2 = lambda v: float(np.sqrt(np.sum(v**2) * basis.cell))  # noqa: E731
    contraction = l2(sm.values) - l2(rough)  # <= 0
    mean_shift = abs(float(np.sum(sm.values - rough) * basis.cell))
    u = torus_test_velocity(atlas)
    comm = commutation_error(u, tau, basis)
    uvals = u("T", x)
    errs = []
    for k in range(1, levels + 1):
        tk = 2.0 ** (-k)
        comps = np.stack([heat_smooth_scalar(uvals[:, i], tk, atlas, basis).values for i in range(2)], axis=1)
        errs.append(float(np.sqrt(np.sum((comps - uvals) ** 2) * basis.cell)))
    return {
        "semigroup": semigroup, "contraction": contraction, "mean_shift": mean_shift,
        "commutation": comm, "smoothing_errors": errs,
        "monotone": bool(np.all(np.diff(errs) < 0.0)),
    }
