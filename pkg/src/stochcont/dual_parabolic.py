"""Linear parabolic problems used as duality test functions.

Cauchy problem (forward time ``s``)::

    d_s v - Laplace v + b v = g,   v(0) = c,

terminal problem (backward in ``t``, ``b <= 0``)::

    d_t phi + Laplace phi - b phi = 0,   phi(t0) = 1.

Time stepping is a Lie splitting: an exact exponential reaction/source
sub-step ``v <- exp(-b dt) v + dt phi_1(-b dt) g`` followed by an implicit
Euler diffusion sub-step with a monotone (M-matrix) Laplacian.  Both
sub-steps preserve order, so ``phi >= 1`` holds to rounding whenever
``b <= 0``, and spatially constant data evolve by the exact ODE flow.

Spatial operators:

* torus: periodic second-order finite differences;
* sphere: five-point stencils of ``(1 + |z|^2)^2 / 4 * flat Laplacian`` on the
  interior nodes of both stereographic grids, fringe nodes tied to the other
  chart by bilinear interpolation (nonnegative weights).

Both operators give M-matrices ``I - dt L``, factored once per step size.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .geometry import FlatTorus, ManifoldAtlas, RoundSphere, ScalarField
from .spde_sim.grids import SphereGrid, TorusGrid, build_grid

logger = logging.getLogger(__name__)


class DualSolverError(RuntimeError):
    """A linear solve failed."""


class SignError(ValueError):
    """The reaction coefficient of the terminal problem is positive somewhere."""


class ResolutionWarning(UserWarning):
    """Grid too coarse for the requested discrete derivatives."""


@dataclass
class GridField:
    """Space-time samples ``values[k, node]`` at uniform times on a grid."""

    grid: object
    times: np.ndarray
    values: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def at(self, k: int) -> dict[str, np.ndarray]:
        return split_nodes(self.grid, self.values[k])

    def interior(self, k: int | slice = slice(None)) -> np.ndarray:
        """Values restricted to nodes the grid owns (all torus nodes; sphere interiors)."""
        return self.values[k][..., owned_nodes(self.grid)]


def owned_nodes(grid) -> np.ndarray:
    if isinstance(grid, TorusGrid):
        return np.arange(grid.size)
    n2 = grid.n * grid.n
    return np.concatenate([grid.active[c] + k * n2 for k, c in enumerate(grid.charts)])


def split_nodes(grid, flat) -> dict[str, np.ndarray]:
    if isinstance(grid, TorusGrid):
        return {"T": np.asarray(flat).reshape(grid.shape)}
    n2 = grid.n * grid.n
    return {c: np.asarray(flat)[k * n2:(k + 1) * n2].reshape(grid.shape) for k, c in enumerate(grid.charts)}


def node_coords(grid) -> list[tuple[str, np.ndarray]]:
    return [(c, grid.nodes[c]) for c in grid.charts]


def _sampler(value) -> Callable:
    """Normalize a coefficient to ``f(chart, x, t) -> array``."""
    if value is None:
        return lambda chart, x, t: np.zeros(len(x))
    if isinstance(value, ScalarField):
        return lambda chart, x, t: value(chart, x, t)
    if callable(value):
        return value
    c = float(value)
    return lambda chart, x, t: np.full(len(x), c)


def sample_on_grid(grid, f, t: float = 0.0) -> np.ndarray:
    f = _sampler(f)
    return np.concatenate([np.asarray(f(c, x, t), dtype=float).ravel() for c, x in node_coords(grid)])


@dataclass
class DualProblem:
    """Coefficients of the Cauchy/terminal problems on a grid.

    ``b`` and ``g`` may be constants, ScalarFields or callables
    ``(chart, x, t) -> array``; ``time_dependent=False`` samples them once.
    """

    grid: object
    t0: float
    dt: float
    b: object = 0.0
    g: object = 0.0
    c: object = 0.0
    p: float = 5.0
    time_dependent: bool = False
    cap: float | None = None  # grid-scale cap used for singular profiles, reported only

    def __post_init__(self):
        d = self.grid.dim
        if self.p <= d + 2:
            raise ValueError(f"integrability exponent p={self.p} must exceed d + 2 = {d + 2}")
        if not self.dt > 0 or not self.t0 > 0:
            raise ValueError("t0 and dt must be positive")
        n = self.t0 / self.dt
        if abs(n - round(n)) > 1e-9 * n:
            raise ValueError("t0 must be a multiple of dt")
        self.n_steps = int(round(n))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


# ---------------------------------------------------------------------------
# Laplacians
# ---------------------------------------------------------------------------


def _monotone_lu(A):
    """Sparse LU with a symmetric ordering and no pivoting.

    For an M-matrix the factors keep their sign pattern, so forward and back
    substitution only add nonnegative terms and the computed solution is
    accurate componentwise; this is what keeps ``phi >= 1`` at rounding
    level even when ``phi`` spans many orders of magnitude.
    """
    try:
        return splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True))
    except RuntimeError as exc:  # singular factor
        raise DualSolverError(f"sparse factorization failed: {exc}") from exc


class TorusLaplacian:
    """Periodic second-order finite differences (``2d + 1``-point stencil)."""

    def __init__(self, grid: TorusGrid):
        self.grid = grid
        n = grid.n
        one = sparse.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil")
        one[0, n - 1] = 1.0
        one[n - 1, 0] = 1.0
        one = one.tocsr() / grid.h**2
        if grid.dim == 1:
            self.L = one
        else:
            eye = sparse.identity(n, format="csr")
            self.L = (sparse.kron(one, eye) + sparse.kron(eye, one)).tocsr()
        k = np.fft.fftfreq(n, 1.0 / n)
        sym1 = (2.0 - 2.0 * np.cos(k * grid.h)) / grid.h**2
        mesh = np.meshgrid(*([sym1] * grid.dim), indexing="ij")
        self.symbol = -sum(mesh)  # eigenvalues, indexed by Fourier mode
        self._factor_cache = {}

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.L @ np.ravel(v)

    def resolvent(self, dt: float) -> Callable[[np.ndarray], np.ndarray]:
        """``v -> (I - dt L)^{-1} v``."""
        if dt not in self._factor_cache:
            A = sparse.identity(self.L.shape[0], format="csr") - dt * self.L
            self._factor_cache[dt] = _monotone_lu(A)
        lu = self._factor_cache[dt]

        def solve(rhs):
            out = lu.solve(np.ascontiguousarray(rhs, dtype=float))
            if not np.all(np.isfinite(out)):
                raise DualSolverError("non-finite values returned by the sparse solve")
            return out

        return solve


class SphereLaplacian:
    """Overset finite-difference Laplace-Beltrami operator on the two stereographic grids."""

    def __init__(self, grid: SphereGrid):
        self.grid = grid
        n, h = grid.n, grid.h
        n2 = n * n
        rows, cols, vals = [], [], []
        self.interior_rows = []
        for k, chart in enumerate(grid.charts):
            off = k * n2
            nodes = grid.nodes[chart]
            act = grid.active[chart]
            i, j = np.unravel_index(act, grid.shape)
            scale = (1.0 + np.sum(nodes[act] ** 2, axis=1)) ** 2 / 4.0 / h**2
            centre = off + act
            rows.append(centre)
            cols.append(centre)
            vals.append(-4.0 * scale)
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nb = np.ravel_multi_index((i + di, j + dj), grid.shape)
                rows.append(centre)
                cols.append(off + nb)
                vals.append(scale)
            self.interior_rows.append(centre)
        self.L = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * n2, 2 * n2)
        )
        # fringe coupling: v_fringe - sum_j w_j v_donor = 0
        rows, cols, vals = [], [], []
        names = grid.charts
        for k, chart in enumerate(names):
            other, coords = grid.donor[chart]
            ko = names.index(other)
            fr = grid.fringe[chart]
            w_idx, w = self._bilinear(coords)
            for m in range(4):
                rows.append(k * n2 + fr)
                cols.append(ko * n2 + w_idx[:, m])
                vals.append(w[:, m])
        self.fringe_rows = np.concatenate([k * n2 + grid.fringe[c] for k, c in enumerate(names)])
        self.P = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * n2, 2 * n2)
        )
        self.owned = np.concatenate(self.interior_rows)
        self._factor_cache = {}

    def _bilinear(self, coords):
        g = self.grid
        s = (coords + g.R) / g.h
        i0 = np.floor(s).astype(int)
        f = s - i0
        if np.any(i0 < 0) or np.any(i0 + 1 >= g.n):
            raise DualSolverError("fringe donor outside the other chart's grid")
        idx = np.stack([
            np.ravel_multi_index((i0[:, 0] + a, i0[:, 1] + b), g.shape) for a, b in ((0, 0), (1, 0), (0, 1), (1, 1))
        ], axis=1)
        w = np.stack([
            (1 - f[:, 0]) * (1 - f[:, 1]), f[:, 0] * (1 - f[:, 1]), (1 - f[:, 0]) * f[:, 1], f[:, 0] * f[:, 1]
        ], axis=1)
        return idx, w

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Laplacian on interior nodes (fringe entries are zero)."""
        return self.L @ v

    def fill_fringe(self, v: np.ndarray) -> np.ndarray:
        out = v.copy()
        out[self.fringe_rows] = (self.P @ v)[self.fringe_rows]
        return out

    def resolvent(self, dt: float):
        if dt not in self._factor_cache:
            N = self.L.shape[0]
            A = sparse.identity(N, format="csr") - dt * self.L - self.P
            self._factor_cache[dt] = _monotone_lu(A)
        lu = self._factor_cache[dt]
        fringe = self.fringe_rows

        def solve(rhs):
            r = rhs.copy()
            r[fringe] = 0.0
            out = lu.solve(r)
            if not np.all(np.isfinite(out)):
                raise DualSolverError("non-finite values returned by the sparse solve")
            return out

        return solve


def build_laplacian(grid):
    if isinstance(grid, TorusGrid):
        return TorusLaplacian(grid)
    if isinstance(grid, SphereGrid):
        return SphereLaplacian(grid)
    raise TypeError(f"no Laplacian for {type(grid).__name__}")


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


def _phi1(z):
    """``(exp(z) - 1) / z`` with the removable singularity handled."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def _march(grid, lap, dt, n_steps, v0, b_at, g_at, keep_fringe):
    """Shared Lie-splitting loop; ``b_at(k)``/``g_at(k)`` give data at step ``k``."""
    solve = lap.resolvent(dt)
    values = np.empty((n_steps + 1, v0.size))
    v = keep_fringe(v0)
    values[0] = v
    for k in range(1, n_steps + 1):
        b = b_at(k)
        g = g_at(k)
        z = -b * dt
        v = v * np.exp(z) + dt * _phi1(z) * g
        v = solve(v)
        values[k] = v
    return values


def solve_cauchy(problem: DualProblem, laplacian=None) -> GridField:
    """``d_s v - Laplace v + b v = g``, ``v(0) = c`` on ``[0, t0]``."""
    grid = problem.grid
    lap = laplacian or build_laplacian(grid)
    times = problem.times
    fill = getattr(lap, "fill_fringe", lambda v: v)
    b_s, g_s = _sampler(problem.b), _sampler(problem.g)
    if problem.time_dependent:
        b_at = lambda k: sample_on_grid(grid, b_s, times[k])  # noqa: E731
        g_at = lambda k: sample_on_grid(grid, g_s, times[k])  # noqa: E731
    else:
        b0, g0 = sample_on_grid(grid, b_s), sample_on_grid(grid, g_s)
        b_at, g_at = (lambda k: b0), (lambda k: g0)  # noqa: E731
    v0 = sample_on_grid(grid, problem.c)
    values = _march(grid, lap, problem.dt, problem.n_steps, v0, b_at, g_at, fill)
    return GridField(grid, times, values)


def check_sign(grid, b, times, time_dependent: bool) -> None:
    samples = [sample_on_grid(grid, b, t) for t in (times if time_dependent else times[:1])]
    worst = max(float(np.max(s[owned_nodes(grid)])) for s in samples)
    if worst > 0.0:
        raise SignError(f"reaction coefficient must be nonpositive; found max b = {worst:g}")


def solve_terminal(problem: DualProblem, laplacian=None) -> GridField:
    """``d_t phi + Laplace phi - b phi = 0``, ``phi(t0) = 1``, marched backward from ``t0``.

    The returned field is indexed by physical time ``t`` (``values[-1] == 1``).
    """
    grid = problem.grid
    times = problem.times
    t0 = problem.t0
    check_sign(grid, problem.b, times, problem.time_dependent)
    lap = laplacian or build_laplacian(grid)
    fill = getattr(lap, "fill_fringe", lambda v: v)
    b_s = _sampler(problem.b)
    if problem.time_dependent:
        # step k of the reversed clock lands on physical time t0 - s_k
        b_at = lambda k: sample_on_grid(grid, b_s, t0 - times[k])  # noqa: E731
    else:
        b0 = sample_on_grid(grid, b_s)
        b_at = lambda k: b0  # noqa: E731
    ones = np.ones(sum(len(x) for _, x in node_coords(grid)))
    zero = np.zeros_like(ones)
    rev = _march(grid, lap, problem.dt, problem.n_steps, ones, b_at, lambda k: zero, fill)
    return GridField(grid, times, rev[::-1].copy())


def terminal_via_cauchy(problem: DualProblem, laplacian=None) -> GridField:
    """``phi(t) = 1 + v(t0 - t)`` with ``v`` the Cauchy solution for ``b~ = b(t0 - .)``, ``g = -b~``, ``c = 0``."""
    t0 = problem.t0
    b_s = _sampler(problem.b)
    b_rev = lambda chart, x, s: b_s(chart, x, t0 - s)  # noqa: E731
    g_rev = lambda chart, x, s: -np.asarray(b_s(chart, x, t0 - s))  # noqa: E731
    aux = DualProblem(problem.grid, t0, problem.dt, b=b_rev, g=g_rev, c=0.0, p=problem.p,
                      time_dependent=problem.time_dependent)
    v = solve_cauchy(aux, laplacian)
    return GridField(problem.grid, problem.times, 1.0 + v.values[::-1])


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def _charts_and_weights(grid):
    return [(c, grid.weights[c], grid.active[c]) for c in grid.charts]


def _grad_components(grid, values2d: dict[str, np.ndarray]):
    """Centred differences, per chart; returns ``{chart: (d, ...)}`` arrays."""
    out = {}
    for c, v in values2d.items():
        if isinstance(grid, TorusGrid):
            comps = [(np.roll(v, -1, axis=a) - np.roll(v, 1, axis=a)) / (2 * grid.h) for a in range(grid.dim)]
        else:
            comps = list(np.gradient(v, grid.h, edge_order=2))
        out[c] = np.stack(comps)
    return out


def _hessian_components(grid, values2d):
    out = {}
    for c, v in values2d.items():
        d = grid.dim
        H = np.empty((d, d) + v.shape)
        if isinstance(grid, TorusGrid):
            for a in range(d):
                H[a, a] = (np.roll(v, -1, axis=a) - 2 * v + np.roll(v, 1, axis=a)) / grid.h**2
                for b in range(a + 1, d):
                    cross = (
                        np.roll(np.roll(v, -1, a), -1, b) - np.roll(np.roll(v, -1, a), 1, b)
                        - np.roll(np.roll(v, 1, a), -1, b) + np.roll(np.roll(v, 1, a), 1, b)
                    ) / (4 * grid.h**2)
                    H[a, b] = H[b, a] = cross
        else:
            g = np.gradient(v, grid.h, edge_order=2)
            for a in range(d):
                ga = np.gradient(g[a], grid.h, edge_order=2)
                for b in range(d):
                    H[a, b] = ga[b]
            H = 0.5 * (H + np.swapaxes(H, 0, 1))
        out[c] = H
    return out


def _metric_factor(grid, chart):
    """Conformal factor ``lambda`` with ``h = lambda I`` at the grid nodes (flattened)."""
    if isinstance(grid, TorusGrid):
        return np.ones(grid.size)
    return RoundSphere.conformal_factor_np(grid.nodes[chart])


def grad_norm(grid, values2d) -> dict[str, np.ndarray]:
    """``|grad w|_h`` per chart (flattened)."""
    grads = _grad_components(grid, values2d)
    out = {}
    for c, G in grads.items():
        lam = _metric_factor(grid, c)
        out[c] = np.sqrt(np.sum(G.reshape(G.shape[0], -1) ** 2, axis=0) / lam)
    return out


def hessian_norm(grid, values2d) -> dict[str, np.ndarray]:
    """``|nabla^2 w|_h`` per chart with the Christoffel correction on the sphere."""
    hess = _hessian_components(grid, values2d)
    grads = _grad_components(grid, values2d)
    out = {}
    for c, H in hess.items():
        d = grid.dim
        Hf = H.reshape(d, d, -1)
        lam = _metric_factor(grid, c)
        if isinstance(grid, SphereGrid):
            x = grid.nodes[c]
            dw = -2.0 * x / (1.0 + np.sum(x * x, axis=1))[:, None]  # gradient of log sqrt(lambda)
            G = grads[c].reshape(d, -1)
            eye = np.eye(d)
            gamma = (
                np.einsum("ki,mj->mkij", eye, dw) + np.einsum("kj,mi->mkij", eye, dw)
                - np.einsum("ij,mk->mkij", eye, dw)
            )
            Hf = Hf - np.einsum("mkij,km->ijm", gamma, G)
        out[c] = np.sqrt(np.sum(Hf**2, axis=(0, 1))) / lam
    return out


def _space_time_lp(grid, series: list[dict[str, np.ndarray]], dt: float, p: float) -> float:
    """``(int_0^t0 int |f|^p)^{1/p}`` with trapezoid in time and grid quadrature in space."""
    vals = []
    for f in series:
        tot = 0.0
        for c, w, act in _charts_and_weights(grid):
            tot += float(np.sum(np.abs(np.ravel(f[c])[act]) ** p * w[act]))
        vals.append(tot)
    vals = np.array(vals)
    if len(vals) == 1:
        return float(vals[0] ** (1.0 / p))
    integral = dt * (np.sum(vals) - 0.5 * (vals[0] + vals[-1]))
    return float(integral ** (1.0 / p))


def anisotropic_norm(w: GridField, p: float) -> float:
    """``sum_{2j + k <= 2} || d_t^j nabla^k w ||_{L^p}`` over ``[0, t0] x M``."""
    grid = w.grid
    if getattr(grid, "n", 0) < 8:
        warnings.warn("grid too coarse for second differences", ResolutionWarning, stacklevel=2)
    dt = w.dt
    frames = [w.at(k) for k in range(len(w.times))]
    terms = {
        "w": _space_time_lp(grid, frames, dt, p),
        "grad": _space_time_lp(grid, [grad_norm(grid, f) for f in frames], dt, p),
        "hess": _space_time_lp(grid, [hessian_norm(grid, f) for f in frames], dt, p),
    }
    if len(w.times) > 1:
        dtw = np.gradient(w.values, dt, axis=0, edge_order=2 if len(w.times) > 2 else 1)
        terms["dt"] = _space_time_lp(grid, [split_nodes(grid, r) for r in dtw], dt, p)
    else:
        terms["dt"] = 0.0
    return float(sum(terms.values()))


def lp_norm(grid, values_flat: np.ndarray, p: float, t0: float = 1.0) -> float:
    """``(t0 int |f|^p)^{1/p}`` for a time-independent nodal field."""
    f = split_nodes(grid, values_flat)
    tot = sum(float(np.sum(np.abs(np.ravel(f[c])[a]) ** p * w[a])) for c, w, a in _charts_and_weights(grid))
    return float((t0 * tot) ** (1.0 / p))


@dataclass
class BoundReport:
    t0: float
    p: float
    b_norm: float
    sup_phi: float
    sup_grad_phi: float
    min_phi: float
    cap: float | None = None

    @property
    def ratio(self) -> float:
        return (self.sup_phi + self.sup_grad_phi) / (1.0 + self.b_norm)

    def row(self) -> dict:
        return {
            "t0": self.t0, "p": self.p, "b_norm": self.b_norm, "sup_phi": self.sup_phi,
            "sup_grad_phi": self.sup_grad_phi, "min_phi": self.min_phi, "ratio": self.ratio,
            "cap": "" if self.cap is None else self.cap,
        }


def bound_report(phi: GridField, problem: DualProblem) -> BoundReport:
    """Sup norms of ``phi`` and ``grad phi`` against ``||b||_{L^p([0, t0] x M)}``."""
    grid = phi.grid
    owned = owned_nodes(grid)
    sup_phi = float(np.max(np.abs(phi.values[:, owned])))
    min_phi = float(np.min(phi.values[:, owned]))
    sup_grad = 0.0
    for k in range(len(phi.times)):
        gn = grad_norm(grid, phi.at(k))
        for c in grid.charts:
            sup_grad = max(sup_grad, float(np.max(gn[c][grid.active[c]])))
    b_series = [
        split_nodes(grid, sample_on_grid(grid, problem.b, t))
        for t in (phi.times if problem.time_dependent else phi.times[:1])
    ]
    if problem.time_dependent:
        b_norm = _space_time_lp(grid, b_series, phi.dt, problem.p)
    else:
        b_norm = lp_norm(grid, np.concatenate([np.ravel(b_series[0][c]) for c in grid.charts]),
                         problem.p, problem.t0)
    return BoundReport(problem.t0, problem.p, b_norm, sup_phi, sup_grad, min_phi, problem.cap)


def make_grid(atlas: ManifoldAtlas, n: int):
    return build_grid(atlas, n)


__all__ = [
    "BoundReport",
    "DualProblem",
    "DualSolverError",
    "GridField",
    "ResolutionWarning",
    "SignError",
    "SphereLaplacian",
    "TorusLaplacian",
    "anisotropic_norm",
    "bound_report",
    "build_laplacian",
    "grad_norm",
    "hessian_norm",
    "lp_norm",
    "make_grid",
    "sample_on_grid",
    "solve_cauchy",
    "solve_terminal",
    "terminal_via_cauchy",
]
