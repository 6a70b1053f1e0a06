"""Chart-based Riemannian geometry on the built-in closed manifolds.

Two manifolds are provided: the flat torus ``T^d`` (one periodic chart,
``d`` in {1, 2}) and the unit sphere ``S^2`` covered by two stereographic
charts.  Every geometric object is described by *pointwise* jax functions of
chart coordinates; derivatives are taken by forward-mode autodiff so that
nested second-order operators stay exact to rounding.  The public API accepts
and returns batched numpy arrays.

Index conventions: ``h[i, j]`` is the metric, ``gamma[k, i, j]`` is
``Gamma^k_{ij}`` and vector components are contravariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np

TWO_PI = 2.0 * math.pi


class GeometryError(Exception):
    """Base class for geometry failures."""


class DomainError(GeometryError, ValueError):
    """Coordinates outside the chart domain (or malformed)."""


class NumericError(GeometryError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class ConstructionError(GeometryError):
    """A geometric construction (frame, partition) degenerated."""


def smoothstep5(s):
    """Quintic C^2 step: 0 for s <= 0, 1 for s >= 1."""
    s = jnp.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


# ---------------------------------------------------------------------------
# charts and atlases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Chart:
    """A coordinate chart.

    ``to_coords`` maps ambient points (angles for the torus, unit vectors in
    R^3 for the sphere) to coordinates, ``from_coords`` is its inverse.  Both
    are pointwise jax functions.
    """

    name: str
    dim: int
    to_coords: Callable
    from_coords: Callable
    radius: float = math.inf
    periodic: bool = False
    excluded_point: tuple | None = None

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(
                f"chart {self.name!r} expects {self.dim}-dimensional coordinates, "
                f"got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise DomainError(f"non-finite coordinates passed to chart {self.name!r}")
        if not self.periodic and np.any(np.linalg.norm(x, axis=-1) >= self.radius):
            raise DomainError(
                f"coordinates outside the domain |x| < {self.radius} of chart {self.name!r}"
            )
        return x

    def contains(self, points) -> np.ndarray:
        """Membership predicate on ambient points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.excluded_point is None:
            return np.ones(points.shape[0], dtype=bool)
        gap = np.linalg.norm(points - np.asarray(self.excluded_point), axis=-1)
        return gap > 1e-9


class ManifoldAtlas:
    """Common machinery of the built-in atlases.

    Subclasses provide the charts, the metric (pointwise, jax), transition
    maps and the square-root partition of unity ``alpha_j`` (with
    ``sum_j alpha_j^2 = 1``) used both for quadrature and for the noise
    frames.
    """

    name: str = "manifold"
    dim: int = 0
    volume: float = float("nan")
    ricci_eps: float = 0.0
    analytic_christoffel: bool = False

    def __init__(self, default_n: int = 64):
        self.charts: dict[str, Chart] = {}
        self.default_n = default_n
        self._cache: dict = {}

    # -- pointwise jax kernels -------------------------------------------
    def metric_local(self, chart: str) -> Callable:
        raise NotImplementedError

    def christoffel_local(self, chart: str) -> Callable:
        """Gamma^k_{ij} from the metric via the Levi-Civita formula."""
        key = ("gamma", chart)
        if key not in self._cache:
            metric = self.metric_local(chart)

            def gamma(x):
                h = metric(x)
                h_inv = jnp.linalg.inv(h)
                dh = jax.jacfwd(metric)(x)  # dh[i, j, l] = d_l h_ij
                # t[l, i, j] = d_i h_jl + d_j h_il - d_l h_ij
                t = (
                    jnp.einsum("jli->lij", dh)
                    + jnp.einsum("ilj->lij", dh)
                    - jnp.einsum("ijl->lij", dh)
                )
                return 0.5 * jnp.einsum("kl,lij->kij", h_inv, t)

            self._cache[key] = gamma
        return self._cache[key]

    def transition_local(self, source: str, target: str) -> Callable:
        raise NotImplementedError

    def transition_jacobian_local(self, source: str, target: str) -> Callable:
        """``d(target coords) / d(source coords)`` as a pointwise function."""
        return jax.jacfwd(self.transition_local(source, target))

    def partition_local(self, j: str) -> Callable:
        """``alpha_j`` as a pointwise function ``(chart, x) -> float``."""
        raise NotImplementedError

    def chart_for_points(self, points) -> np.ndarray:
        """Index (into ``chart_names``) of the preferred chart per ambient point."""
        raise NotImplementedError

    @property
    def chart_names(self) -> list[str]:
        return list(self.charts)

    # -- batched numpy helpers --------------------------------------------
    def batched(self, key, fn: Callable, extra_args: int = 0) -> Callable:
        """jit(vmap(fn)) over the first argument, cached under ``key``."""
        key = ("batched", key)
        if key not in self._cache:
            in_axes = (0,) + (None,) * extra_args
            self._cache[key] = jax.jit(jax.vmap(fn, in_axes=in_axes))
        return self._cache[key]

    def to_coords(self, chart: str, points) -> np.ndarray:
        fn = self.batched(("to", chart), self.charts[chart].to_coords)
        return np.asarray(fn(np.atleast_2d(np.asarray(points, dtype=float))))

    def from_coords(self, chart: str, x) -> np.ndarray:
        x = self.charts[chart].check(np.atleast_2d(x))
        fn = self.batched(("from", chart), self.charts[chart].from_coords)
        return np.asarray(fn(x))

    def transition(self, source: str, target: str, x) -> np.ndarray:
        x = self.charts[source].check(np.atleast_2d(x))
        fn = self.batched(("tr", source, target), self.transition_local(source, target))
        return np.asarray(fn(x))

    def transition_jacobian(self, source: str, target: str, x) -> np.ndarray:
        x = self.charts[source].check(np.atleast_2d(x))
        fn = self.batched(
            ("trj", source, target), jax.jacfwd(self.transition_local(source, target))
        )
        return np.asarray(fn(x))

    def partition(self, j: str, chart: str, x) -> np.ndarray:
        x = self.charts[chart].check(np.atleast_2d(x))
        alpha = self.partition_local(j)
        fn = self.batched(("alpha", j, chart), lambda y: alpha(chart, y))
        return np.asarray(fn(x))

    def locate(self, points) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """Group ambient points by preferred chart: ``(chart, indices, coords)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        which = self.chart_for_points(points)
        out = []
        for k, name in enumerate(self.chart_names):
            idx = np.nonzero(which == k)[0]
            if idx.size:
                out.append((name, idx, self.to_coords(name, points[idx])))
        return out

    def quadrature(self, n: int | None = None) -> "Quadrature":
        raise NotImplementedError

    def random_points(self, rng: np.random.Generator, m: int) -> np.ndarray:
        raise NotImplementedError


class FlatTorus(ManifoldAtlas):
    """``T^d = (R / 2 pi Z)^d`` with the flat metric, one periodic chart."""

    analytic_christoffel = True
    ricci_eps = 0.0

    def __init__(self, dim: int = 2, default_n: int = 64):
        if dim not in (1, 2):
            raise ValueError("only T^1 and T^2 are built in")
        super().__init__(default_n)
        self.dim = dim
        self.name = f"torus{dim}"
        self.volume = TWO_PI**dim

        def wrap(p):
            return jnp.mod(p, TWO_PI)

        self.charts = {"T": Chart("T", dim, wrap, wrap, periodic=True)}

    def metric_local(self, chart):
        d = self.dim
        return lambda x: jnp.eye(d) + 0.0 * x[0]

    def christoffel_local(self, chart):
        d = self.dim
        return lambda x: jnp.zeros((d, d, d)) + 0.0 * x[0]

    def transition_local(self, source, target):
        return lambda x: x

    def partition_local(self, j):
        return lambda chart, x: 1.0 + 0.0 * x[0]

    def chart_for_points(self, points):
        return np.zeros(np.atleast_2d(points).shape[0], dtype=int)

    def quadrature(self, n=None):
        n = int(n or self.default_n)
        key = ("quad", n)
        if key not in self._cache:
            h = TWO_PI / n
            axes = [np.arange(n) * h] * self.dim
            nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
            w = np.full(nodes.shape[0], h**self.dim)
            block = QuadratureBlock("T", nodes, w, np.ones(len(w)), np.ones(len(w)))
            self._cache[key] = Quadrature(self, n, [block])
        return self._cache[key]

    def random_points(self, rng, m):
        return rng.uniform(0.0, TWO_PI, size=(m, self.dim))


class RoundSphere(ManifoldAtlas):
    """Unit ``S^2`` with two stereographic charts.

    ``north`` is centred at the north pole (projection from the south pole)
    and ``south`` at the south pole.  Both have the conformal metric
    ``4 / (1 + |z|^2)^2 I``; the transition is the inversion ``z / |z|^2``.

    The square-root partition is ``alpha_north = cos(pi/2 s)``,
    ``alpha_south = sin(pi/2 s)`` with ``s`` a quintic step in the height
    ``p_3`` across the band of colatitudes ``[90 - band, 90 + band]`` degrees.
    """

    analytic_christoffel = True
    ricci_eps = 1.0

    def __init__(self, default_n: int = 64, band_deg: float = 20.0, quad_radius: float = 1.5):
        super().__init__(default_n)
        self.dim = 2
        self.name = "sphere2"
        self.volume = 4.0 * math.pi
        self.band = math.sin(math.radians(band_deg))
        # coordinate radius of supp alpha_j inside its own chart
        self.support_radius = math.sqrt((1.0 + self.band) / (1.0 - self.band))
        if quad_radius <= self.support_radius:
            raise ValueError("quadrature box must contain the partition support")
        self.quad_radius = quad_radius

        def north_to(p):
            return jnp.stack([p[0], p[1]]) / (1.0 + p[2])

        def south_to(p):
            return jnp.stack([p[0], p[1]]) / (1.0 - p[2])

        def north_from(x):
            r2 = x @ x
            return jnp.stack([2 * x[0], 2 * x[1], 1.0 - r2]) / (1.0 + r2)

        def south_from(x):
            r2 = x @ x
            return jnp.stack([2 * x[0], 2 * x[1], r2 - 1.0]) / (1.0 + r2)

        self.charts = {
            "north": Chart("north", 2, north_to, north_from, radius=1e4,
                           excluded_point=(0.0, 0.0, -1.0)),
            "south": Chart("south", 2, south_to, south_from, radius=1e4,
                           excluded_point=(0.0, 0.0, 1.0)),
        }

    @staticmethod
    def conformal_factor(x):
        return 4.0 / (1.0 + x @ x) ** 2

    def metric_local(self, chart):
        return lambda x: self.conformal_factor(x) * jnp.eye(2)

    def christoffel_local(self, chart):
        # h = exp(2w) delta with w = log 2 - log(1 + |x|^2)
        def gamma(x):
            dw = -2.0 * x / (1.0 + x @ x)
            eye = jnp.eye(2)
            return (
                jnp.einsum("ki,j->kij", eye, dw)
                + jnp.einsum("kj,i->kij", eye, dw)
                - jnp.einsum("ij,k->kij", eye, dw)
            )

        return gamma

    def christoffel_from_metric(self, chart):
        """Generic Levi-Civita route (kept for cross-checks)."""
        return ManifoldAtlas.christoffel_local(self, chart)

    def transition_local(self, source, target):
        if source == target:
            return lambda x: x

        def invert(x):
            r2 = x @ x
            safe = r2 > 1e-24
            xs = jnp.where(safe, x, jnp.ones_like(x))
            return jnp.where(safe, xs / (xs @ xs), jnp.full_like(x, 1e12))

        return invert

    def transition_jacobian_local(self, source, target):
        if source == target:
            return lambda x: jnp.eye(2) + 0.0 * x[0]

        def jac(x):
            r2 = x @ x
            safe = r2 > 1e-24
            xs = jnp.where(safe, x, jnp.ones_like(x))
            r2s = xs @ xs
            return (jnp.eye(2) * r2s - 2.0 * jnp.outer(xs, xs)) / r2s**2

        return jac

    def height(self, chart, x):
        r2 = x @ x
        p3 = (1.0 - r2) / (1.0 + r2)
        return p3 if chart == "north" else -p3

    def step(self, p3):
        return smoothstep5((self.band - p3) / (2.0 * self.band))

    def partition_local(self, j):
        def alpha(chart, x):
            s = self.step(self.height(chart, x))
            # sin form on both sides so each alpha is exactly zero off its support
            if j == "north":
                return jnp.sin(0.5 * math.pi * (1.0 - s))
            return jnp.sin(0.5 * math.pi * s)

        return alpha

    def chart_for_points(self, points):
        points = np.atleast_2d(points)
        return np.where(points[:, 2] >= 0.0, 0, 1)

    def quadrature(self, n=None):
        n = int(n or self.default_n)
        key = ("quad", n)
        if key not in self._cache:
            R = self.quad_radius
            ax = np.linspace(-R, R, n)
            h = ax[1] - ax[0]
            X, Y = np.meshgrid(ax, ax, indexing="ij")
            nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)
            trap = np.ones(n)
            trap[0] = trap[-1] = 0.5
            cell = np.outer(trap, trap).ravel() * h * h
            blocks = []
            for name in self.chart_names:
                pou = self.partition(name, name, nodes) ** 2
                sqrt_det = self.conformal_factor_np(nodes)
                blocks.append(QuadratureBlock(name, nodes, cell * pou * sqrt_det, pou, sqrt_det))
            self._cache[key] = Quadrature(self, n, blocks)
        return self._cache[key]

    @staticmethod
    def conformal_factor_np(x):
        x = np.atleast_2d(x)
        return 4.0 / (1.0 + np.sum(x * x, axis=-1)) ** 2

    def random_points(self, rng, m):
        p = rng.normal(size=(m, 3))
        return p / np.linalg.norm(p, axis=-1, keepdims=True)


def build_atlas(name: str, n_per_axis: int = 64) -> ManifoldAtlas:
    """Atlas from the config key ``manifold``."""
    if name == "torus2":
        return FlatTorus(2, n_per_axis)
    if name == "torus1":
        return FlatTorus(1, n_per_axis)
    if name == "sphere2":
        return RoundSphere(n_per_axis)
    raise ValueError(f"unknown manifold {name!r} (expected torus1, torus2 or sphere2)")


# ---------------------------------------------------------------------------
# metric data (numpy API)
# ---------------------------------------------------------------------------


def metric_data(atlas: ManifoldAtlas, chart: str, x):
    """``(h, h_inv, sqrt_det)`` at coordinates ``x`` of shape ``(m, d)`` or ``(d,)``."""
    single = np.ndim(x) == 1
    x = atlas.charts[chart].check(np.atleast_2d(x))
    metric = atlas.metric_local(chart)
    h = np.asarray(atlas.batched(("h", chart), metric)(x))
    h_inv = np.linalg.inv(h)
    sqrt_det = np.sqrt(np.abs(np.linalg.det(h)))
    if single:
        return h[0], h_inv[0], sqrt_det[0]
    return h, h_inv, sqrt_det


def christoffel(atlas: ManifoldAtlas, chart: str, x) -> np.ndarray:
    """``Gamma^k_{ij}`` with shape ``(m, d, d, d)`` (index order k, i, j)."""
    single = np.ndim(x) == 1
    x = atlas.charts[chart].check(np.atleast_2d(x))
    g = np.asarray(atlas.batched(("gamma", chart), atlas.christoffel_local(chart))(x))
    return g[0] if single else g


def christoffel_fd(atlas: ManifoldAtlas, chart: str, x, rel_step: float = 1e-5) -> np.ndarray:
    """Christoffel symbols from centred finite differences of the metric.

    Independent of the autodiff path; used as an oracle.
    """
    x = atlas.charts[chart].check(np.atleast_2d(x))
    m, d = x.shape
    step = rel_step * np.maximum(1.0, np.linalg.norm(x, axis=-1))
    dh = np.empty((m, d, d, d))  # dh[:, l, i, j] = d_l h_ij
    for l in range(d):
        e = np.zeros(d)
        e[l] = 1.0
        hp, _, _ = metric_data(atlas, chart, x + step[:, None] * e)
        hm, _, _ = metric_data(atlas, chart, x - step[:, None] * e)
        dh[:, l] = (hp - hm) / (2.0 * step[:, None, None])
    _, h_inv, _ = metric_data(atlas, chart, x)
    t = (
        np.einsum("mijl->mlij", dh)
        + np.einsum("mjil->mlij", dh)
        - np.einsum("mlij->mlij", dh)
    )
    return 0.5 * np.einsum("mkl,mlij->mkij", h_inv, t)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def _as_local(value) -> Callable:
    if callable(value):
        return value
    c = float(value)
    return lambda chart, x, t: c + 0.0 * x[0]


class _Field:
    _kind = "field"

    def __init__(self, atlas: ManifoldAtlas, local: Callable, name: str = ""):
        self.atlas = atlas
        self.local = local
        self.name = name
        self._compiled: dict[str, Callable] = {}

    def at(self, chart: str) -> Callable:
        """Pointwise function ``(x, t) -> value`` in ``chart``."""
        local = self.local
        return lambda x, t=0.0: local(chart, x, t)

    def __call__(self, chart: str, x, t: float = 0.0) -> np.ndarray:
        single = np.ndim(x) == 1
        x = self.atlas.charts[chart].check(np.atleast_2d(x))
        if chart not in self._compiled:
            local = self.local
            self._compiled[chart] = jax.jit(
                jax.vmap(lambda y, s: local(chart, y, s), in_axes=(0, None))
            )
        out = np.asarray(self._compiled[chart](x, float(t)))
        return out[0] if single else out

    def __repr__(self):
        return f"{type(self).__name__}({self.name or '<anonymous>'} on {self.atlas.name})"


class ScalarField(_Field):
    """Real function on the manifold, given per chart."""

    @classmethod
    def constant(cls, atlas, c: float) -> "ScalarField":
        return cls(atlas, _as_local(c), name=f"const({c:g})")

    @classmethod
    def from_ambient(cls, atlas, fn: Callable, name: str = "") -> "ScalarField":
        """From ``fn(p, t)`` with ``p`` an ambient point (angles or R^3 vector)."""
        charts = atlas.charts

        def local(chart, x, t):
            return fn(charts[chart].from_coords(x), t)

        return cls(atlas, local, name)

    def _binary(self, other, op, name):
        other_local = other.local if isinstance(other, ScalarField) else _as_local(other)
        mine = self.local
        return ScalarField(
            self.atlas, lambda c, x, t: op(mine(c, x, t), other_local(c, x, t)), name
        )

    def __add__(self, other):
        return self._binary(other, jnp.add, "sum")

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, jnp.subtract, "difference")

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, VectorField):
            return other * self
        return self._binary(other, jnp.multiply, "product")

    __rmul__ = __mul__

    def __neg__(self):
        mine = self.local
        return ScalarField(self.atlas, lambda c, x, t: -mine(c, x, t), self.name)

    def map(self, fn: Callable, name: str = "") -> "ScalarField":
        mine = self.local
        return ScalarField(self.atlas, lambda c, x, t: fn(mine(c, x, t)), name)


class VectorField(_Field):
    """Tangent vector field; ``local(chart, x, t)`` returns contravariant components."""

    @classmethod
    def from_ambient(cls, atlas, fn: Callable, name: str = "") -> "VectorField":
        """From an ambient tangent-vector function ``fn(p, t) -> R^3`` (sphere)."""
        charts = atlas.charts

        def local(chart, x, t):
            p = charts[chart].from_coords(x)
            _, comps = jax.jvp(charts[chart].to_coords, (p,), (fn(p, t),))
            return comps

        return cls(atlas, local, name)

    @classmethod
    def constant_components(cls, atlas, comps, name: str = "") -> "VectorField":
        comps = jnp.asarray(comps, dtype=float)
        return cls(atlas, lambda c, x, t: comps + 0.0 * x[0], name)

    def __add__(self, other):
        a, b = self.local, other.local
        return VectorField(self.atlas, lambda c, x, t: a(c, x, t) + b(c, x, t), "sum")

    def __sub__(self, other):
        a, b = self.local, other.local
        return VectorField(self.atlas, lambda c, x, t: a(c, x, t) - b(c, x, t), "difference")

    def __mul__(self, other):
        mine = self.local
        if isinstance(other, ScalarField):
            s = other.local
            return VectorField(self.atlas, lambda c, x, t: s(c, x, t) * mine(c, x, t), self.name)
        k = float(other)
        return VectorField(self.atlas, lambda c, x, t: k * mine(c, x, t), self.name)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------


def inner(atlas: ManifoldAtlas, X: VectorField, Y: VectorField) -> ScalarField:
    """``(X, Y)_h``."""

    def local(c, x, t):
        return X.local(c, x, t) @ atlas.metric_local(c)(x) @ Y.local(c, x, t)

    return ScalarField(atlas, local, "inner")


def grad(atlas: ManifoldAtlas, f: ScalarField) -> VectorField:
    """``grad_h f = h^{ij} d_i f d_j``."""

    def local(c, x, t):
        df = jax.grad(lambda y: f.local(c, y, t))(x)
        return jnp.linalg.solve(atlas.metric_local(c)(x), df)

    return VectorField(atlas, local, f"grad({f.name})")


def div(atlas: ManifoldAtlas, X: VectorField) -> ScalarField:
    """``d_j X^j + Gamma^j_{kj} X^k``."""

    def local(c, x, t):
        jac = jax.jacfwd(lambda y: X.local(c, y, t))(x)
        gamma = atlas.christoffel_local(c)(x)
        return jnp.trace(jac) + jnp.einsum("jkj,k->", gamma, X.local(c, x, t))

    return ScalarField(atlas, local, f"div({X.name})")


def laplace(atlas: ManifoldAtlas, f: ScalarField) -> ScalarField:
    """Laplace-Beltrami operator as ``div(grad f)``."""
    out = div(atlas, grad(atlas, f))
    out.name = f"laplace({f.name})"
    return out


def directional(X: VectorField, f: ScalarField) -> ScalarField:
    """``X(f) = X^j d_j f``."""

    def local(c, x, t):
        return X.local(c, x, t) @ jax.grad(lambda y: f.local(c, y, t))(x)

    return ScalarField(X.atlas, local, f"{X.name}({f.name})")


def second_directional(X: VectorField, f: ScalarField) -> ScalarField:
    """``X(X(f))`` by nesting the directional derivative."""
    return directional(X, directional(X, f))


def second_directional_covariant(atlas: ManifoldAtlas, X: VectorField, f: ScalarField) -> ScalarField:
    """``(nabla^2 f)(X, X) + (nabla_X X)(f)`` through Christoffel symbols."""

    def local(c, x, t):
        fn = lambda y: f.local(c, y, t)  # noqa: E731
        Xfn = lambda y: X.local(c, y, t)  # noqa: E731
        gamma = atlas.christoffel_local(c)(x)
        df = jax.grad(fn)(x)
        hess = jax.hessian(fn)(x) - jnp.einsum("kij,k->ij", gamma, df)
        Xv = Xfn(x)
        dX = jax.jacfwd(Xfn)(x)  # dX[k, j] = d_j X^k
        nabla_XX = dX @ Xv + jnp.einsum("kij,i,j->k", gamma, Xv, Xv)
        return Xv @ hess @ Xv + nabla_XX @ df

    return ScalarField(atlas, local, "covariant second derivative")


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass
class QuadratureBlock:
    chart: str
    nodes: np.ndarray
    weights: np.ndarray  # partition weight * sqrt|h| * cell volume
    pou: np.ndarray
    sqrt_det: np.ndarray


@dataclass
class Quadrature:
    """Per-chart nodes with squared-partition weights (they sum to 1 pointwise)."""

    atlas: ManifoldAtlas
    n: int
    blocks: list[QuadratureBlock] = field(default_factory=list)

    @property
    def size(self) -> int:
        return sum(b.nodes.shape[0] for b in self.blocks)

    def evaluate(self, f, t: float = 0.0) -> list[np.ndarray]:
        if isinstance(f, ScalarField):
            return [f(b.chart, b.nodes, t) for b in self.blocks]
        if callable(f):
            return [np.asarray(f(b.chart, b.nodes)) for b in self.blocks]
        return [np.asarray(v) for v in f]

    def integrate(self, f, t: float = 0.0) -> float:
        """``sum_charts sum_nodes alpha_j^2 f sqrt|h| w``.

        ``f`` is a ScalarField, a callable ``(chart, nodes) -> values`` or a
        sequence of per-block nodal arrays.
        """
        total = 0.0
        for block, vals in zip(self.blocks, self.evaluate(f, t)):
            vals = np.asarray(vals, dtype=float)
            active = block.weights != 0.0
            bad = active & ~np.isfinite(vals)
            if np.any(bad):
                node = int(np.nonzero(bad)[0][0])
                raise NumericError(
                    f"non-finite integrand in chart {block.chart!r} at node {node} "
                    f"(coords {block.nodes[node]})"
                )
            total += float(np.sum(np.where(active, vals, 0.0) * block.weights))
        return total


def integrate(atlas: ManifoldAtlas, f, n: int | None = None, t: float = 0.0) -> float:
    """Integral of ``f`` against ``dV_h`` on the atlas quadrature."""
    return atlas.quadrature(n).integrate(f, t)


def quadrature_nodes(atlas: ManifoldAtlas, n: int | None = None) -> Sequence[QuadratureBlock]:
    return atlas.quadrature(n).blocks
