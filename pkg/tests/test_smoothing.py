from __future__ import annotations

import math

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochcont.experiments.checks import torus_test_velocity
from stochcont.geometry import ScalarField, VectorField, build_atlas
from stochcont.smoothing import (
    MollifierSpec,
    ResolutionWarning,
    SphereBasis,
    TorusBasis,
    UnsupportedManifoldError,
    chart_mollify,
    commutation_error,
    heat_smooth_scalar,
    heat_smooth_vector_flat,
    smooth_velocity,
    spectral_field,
    time_mollify,
)

TORUS = build_atlas("torus2")
SPHERE = build_atlas("sphere2")
BASIS = TorusBasis(32, 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(-4, 4), st.integers(-4, 4), st.floats(0.0, 0.5))
def test_heat_semigroup_damps_fourier_modes_exactly(k1, k2, tau):
    x = BASIS.nodes
    w = np.cos(k1 * x[:, 0] + k2 * x[:, 1])
    out = heat_smooth_scalar(w, tau, TORUS, BASIS).values
    assert np.allclose(out, math.exp(-(k1**2 + k2**2) * tau) * w, atol=1e-12)


def test_spherical_harmonics_decay_at_their_eigenvalue():
    basis = SphereBasis(8)
    p3 = ScalarField.from_ambient(SPHERE, lambda p, t: p[2])
    p12 = ScalarField.from_ambient(SPHERE, lambda p, t: p[0] * p[1])
    f = heat_smooth_scalar(p3 + p12, 0.1, SPHERE, basis)
    pts = SPHERE.random_points(np.random.default_rng(0), 20)
    exact = math.exp(-0.2) * pts[:, 2] + math.exp(-0.6) * pts[:, 0] * pts[:, 1]
    assert np.allclose(f.evaluate(pts), exact, atol=1e-12)
    assert math.isclose(f.integral(), 0.0, abs_tol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 0.3), st.floats(0.0, 0.3), st.integers(0, 1000))
def test_semigroup_contraction_and_mean(s, t, seed):
    w = np.random.default_rng(seed).normal(size=BASIS.nodes.shape[0])
    two = heat_smooth_scalar(heat_smooth_scalar(w, s, TORUS, BASIS), t).values
    one = heat_smooth_scalar(w, s + t, TORUS, BASIS).values
    assert np.allclose(two, one, atol=1e-12)
    assert np.linalg.norm(one) <= np.linalg.norm(w) * (1 + 1e-12)
    assert math.isclose(one.sum(), w.sum(), abs_tol=1e-9)


def test_heat_smoothing_rejects_negative_time():
    with pytest.raises(ValueError):
        heat_smooth_scalar(np.zeros(BASIS.nodes.shape[0]), -1.0, TORUS, BASIS)


def test_commutation_with_divergence():
    u = torus_test_velocity(TORUS)
    assert commutation_error(u, 0.1, BASIS) <= 1e-10


def test_vector_smoothing_is_flat_torus_only():
    X = VectorField.from_ambient(SPHERE, lambda p, t: jnp.cross(jnp.array([0.0, 0.0, 1.0]), p))
    with pytest.raises(UnsupportedManifoldError):
        heat_smooth_vector_flat(X, 0.1)


def test_to_scalar_field_reproduces_nodal_values():
    x = BASIS.nodes
    w = np.exp(np.sin(x[:, 0])) * np.cos(x[:, 1])
    f = spectral_field(TORUS, w, BASIS).to_scalar_field()
    assert np.allclose(f("T", x), w, atol=1e-12)


def test_mollifier_has_unit_mass_and_compact_support():
    eta = MollifierSpec(0.2)
    assert math.isclose(eta.mass(), 1.0, rel_tol=1e-10)
    assert eta(np.array([0.2, -0.25, 1.0])).max() == 0.0
    with pytest.raises(ValueError):
        MollifierSpec(0.0)


def test_time_mollify_keeps_constants_and_warns_when_coarse():
    t = np.linspace(0.0, 1.0, 201)
    v = np.full((t.size, 3), 2.5)
    out = time_mollify(v, t, 0.05, extension="edge")
    assert np.allclose(out, 2.5, atol=1e-13)
    with pytest.warns(ResolutionWarning):
        time_mollify(v, t, 0.01)


def test_smoothed_velocity_is_zero_outside_the_horizon_and_smooth_inside():
    u = torus_test_velocity(TORUS)
    sv = smooth_velocity(u, 0.05, 1.0, BASIS)
    assert np.all(sv.nodal(1.2) == 0.0)
    inside = sv.nodal(0.5)
    direct = np.stack([heat_smooth_scalar(u("T", BASIS.nodes)[:, i], 0.05, TORUS, BASIS).values for i in range(2)],
                      axis=1)
    # u is autonomous, so time mollification away from the ends is the identity
    assert np.allclose(inside, direct, atol=1e-10)


def test_chart_mollify_converges_to_the_function():
    f = ScalarField.from_ambient(SPHERE, lambda p, t: p[2] + p[0] ** 2)
    pts = SPHERE.random_points(np.random.default_rng(3), 50)
    exact = pts[:, 2] + pts[:, 0] ** 2
    errs = [np.max(np.abs(chart_mollify(SPHERE, f, tau, n=256)(pts) - exact)) for tau in (0.2, 0.1, 0.05)]
    assert errs[0] > errs[1] > errs[2]
