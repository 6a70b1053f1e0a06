from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sp_integrate

from stochcont.dual_parabolic import (
    DualProblem,
    GridField,
    ResolutionWarning,
    SignError,
    SphereLaplacian,
    TorusLaplacian,
    anisotropic_norm,
    bound_report,
    owned_nodes,
    sample_on_grid,
    solve_cauchy,
    solve_terminal,
    terminal_via_cauchy,
)
from stochcont.geometry import build_atlas
from stochcont.spde_sim import build_grid

TORUS = build_atlas("torus2")
SPHERE = build_atlas("sphere2")
GT = build_grid(TORUS, 32)
GS = build_grid(SPHERE, 32)


def test_problem_validation():
    with pytest.raises(ValueError):
        DualProblem(GT, 0.1, 1e-2, p=4.0)  # p must exceed d + 2
    with pytest.raises(ValueError):
        DualProblem(GT, 0.105, 1e-2)
    with pytest.raises(ValueError):
        DualProblem(GT, -1.0, 1e-2)


def test_positive_reaction_is_rejected():
    with pytest.raises(SignError):
        solve_terminal(DualProblem(GT, 0.1, 1e-2, b=0.5))
    with pytest.raises(SignError):
        solve_terminal(DualProblem(GT, 0.1, 1e-2, b=lambda c, x, t: np.where(t > 0.05, 1.0, -1.0) + 0 * x[:, 0],
                                   time_dependent=True))


def test_torus_laplacian_symbol_matches_the_matrix():
    lap = TorusLaplacian(GT)
    k = (3, -2)
    X = GT.nodes["T"].reshape(-1, 2)
    v = np.cos(k[0] * X[:, 0] + k[1] * X[:, 1])
    lam = -sum((2 - 2 * math.cos(kk * GT.h)) / GT.h**2 for kk in k)
    assert np.allclose(lap.apply(v), lam * v, atol=1e-9)
    assert math.isclose(lap.symbol[k[0], k[1]], lam, rel_tol=1e-12)


def test_sphere_laplacian_is_an_m_matrix():
    L = SphereLaplacian(GS).L.tocoo()
    off = L.row != L.col
    assert np.all(L.data[off] >= 0.0)
    assert np.all(L.diagonal()[owned_nodes(GS)] < 0.0)


@pytest.mark.parametrize("grid", [GT, GS], ids=["torus", "sphere"])
def test_constant_reaction_closed_form(grid):
    phi = solve_terminal(DualProblem(grid, 0.3, 1e-2, b=-2.0))
    assert phi.values.shape[0] == 31
    exact = np.exp(2.0 * (0.3 - phi.times))[:, None]
    assert np.max(np.abs(phi.interior() / exact - 1)) < 1e-12
    assert np.allclose(phi.interior(-1), 1.0)


def test_two_routes_to_the_terminal_problem_agree():
    b = lambda c, x, t: -(1.5 + np.sin(x[:, 0]) * np.cos(x[:, 1])) * (1 + t)  # noqa: E731
    prob = DualProblem(GT, 0.2, 1e-2, b=b, time_dependent=True)
    direct = solve_terminal(prob)
    via = terminal_via_cauchy(prob)
    assert np.max(np.abs(direct.values - via.values)) < 1e-11 * np.max(direct.values)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 3.0), st.integers(0, 100))
def test_maximum_principle(c0, c1, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=3)
    b = lambda c, x, t: -(c0 + c1 * np.abs(a[0] * np.sin(x[:, 0]) + a[1] * np.cos(x[:, 1]) + a[2]))  # noqa: E731
    phi = solve_terminal(DualProblem(GT, 0.1, 1e-2, b=b))
    assert np.min(phi.values) >= 1.0 - 1e-12
    # phi is nonincreasing in t (the reaction only adds mass going backward)
    assert np.all(np.diff(phi.values, axis=0) <= 1e-12)


def test_heat_decay_of_a_spherical_harmonic():
    def Y(c, x, t=0.0):
        return SPHERE.from_coords(c, x)[:, 2]

    errs = []
    for n in (32, 64):
        grid = build_grid(SPHERE, n)
        v = solve_cauchy(DualProblem(grid, 0.05, 1e-3, c=Y))
        own = owned_nodes(grid)
        exact = sample_on_grid(grid, Y) * math.exp(-2 * 0.05)
        errs.append(np.max(np.abs(v.values[-1] - exact)[own]))
    assert errs[1] < 1e-3 and errs[0] / errs[1] > 3.0


def test_cauchy_source_builds_the_stationary_solution():
    # v_t = Lap v + g with g = -Lap_h Y has the fixed point Y
    lap = TorusLaplacian(GT)
    X = GT.nodes["T"].reshape(-1, 2)
    Y = np.sin(X[:, 0]) + np.cos(2 * X[:, 1])
    g = -lap.apply(Y)
    v = solve_cauchy(DualProblem(GT, 40.0, 0.5, g=lambda c, x, t: g))
    assert np.max(np.abs(v.values[-1] - Y)) < 1e-8


def _sin_norm_oracle(p: float, t0: float) -> float:
    q = sp_integrate.quad(lambda s: abs(math.sin(s)) ** p, 0, 2 * math.pi, epsabs=1e-13)[0]
    # |w| = |sin x1|, |grad w| = |cos x1|, |hess w| = |sin x1| share one L^p norm
    return 3.0 * (t0 * 2 * math.pi * q) ** (1.0 / p)


def test_anisotropic_norm_of_a_static_mode():
    grid = build_grid(TORUS, 64)
    vals = np.sin(grid.nodes["T"].reshape(-1, 2)[:, 0])
    w = GridField(grid, np.linspace(0, 1.0, 11), np.tile(vals, (11, 1)))
    assert math.isclose(anisotropic_norm(w, 5.0), _sin_norm_oracle(5.0, 1.0), rel_tol=5e-3)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 10.0))
def test_anisotropic_norm_is_homogeneous(lam):
    vals = np.cos(GT.nodes["T"].reshape(-1, 2) @ np.array([1.0, 2.0]))
    times = np.linspace(0, 0.5, 6)
    w = GridField(GT, times, np.exp(times)[:, None] * vals[None])
    w2 = GridField(GT, times, lam * w.values)
    assert math.isclose(anisotropic_norm(w2, 5.0), lam * anisotropic_norm(w, 5.0), rel_tol=1e-12)


def test_anisotropic_norm_warns_on_tiny_grids():
    g = build_grid(TORUS, 6)
    w = GridField(g, np.array([0.0, 0.1]), np.ones((2, g.size)))
    with pytest.warns(ResolutionWarning):
        anisotropic_norm(w, 5.0)


def test_bound_report_for_constant_reaction():
    prob = DualProblem(GT, 0.5, 1e-2, b=-1.0)
    rep = bound_report(solve_terminal(prob), prob)
    assert math.isclose(rep.sup_phi, math.exp(0.5), rel_tol=1e-12)
    assert rep.sup_grad_phi < 1e-10
    # ||b||_{L^5([0, 1/2] x T^2)} = (0.5 * 4 pi^2)^(1/5)
    assert math.isclose(rep.b_norm, (0.5 * 4 * math.pi**2) ** 0.2, rel_tol=1e-12)
    assert math.isclose(rep.ratio, (rep.sup_phi + rep.sup_grad_phi) / (1 + rep.b_norm))
    assert set(rep.row()) >= {"t0", "p", "b_norm", "sup_phi", "sup_grad_phi", "min_phi", "ratio"}


def test_time_stepping_is_first_order():
    # manufactured a(t) Y with the discrete symbol of Y, so only time error remains
    grid = build_grid(TORUS, 32)
    lam_h = 2 * (2 - 2 * math.cos(grid.h)) / grid.h**2
    Y = lambda c, x: np.cos(x[:, 0]) * np.cos(x[:, 1])  # noqa: E731
    a = lambda t: 1 + t + t**2  # noqa: E731
    g = lambda c, x, t: ((1 + 2 * t) + (lam_h - 0.5) * a(t)) * Y(c, x)  # noqa: E731
    exact = a(0.4) * sample_on_grid(grid, lambda c, x, t: Y(c, x))
    errs = []
    for dt in (0.04, 0.02, 0.01):
        v = solve_cauchy(DualProblem(grid, 0.4, dt, b=-0.5, g=g, c=lambda c, x, t: Y(c, x), time_dependent=True))
        errs.append(np.max(np.abs(v.values[-1] - exact)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(ratios / 2.0 - 1.0) < 0.02)
