"""Noise vector fields ``a_1 .. a_N`` with ``sum_i a_i (x) a_i = 2 h^{-1}``.

Three constructions are available:

* ``partition``: ``a = sqrt(2) alpha_j E_{j,i}`` where ``E_j`` is a pointwise
  Gram-Schmidt frame of chart ``j`` and ``alpha_j`` the square-root partition
  of unity of the atlas (``N = d * #charts``);
* ``embedded`` (unit sphere only): ``a_i = sqrt(2) (e_i - (e_i . p) p)``;
* ``coordinate`` (torus only): ``a_i = sqrt(2) d_i``.

The derived operators are ``bar_a_i = (div a_i) a_i`` and
``Lambda_i(psi) = div(div(psi a_i) a_i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from .geometry import (
    ConstructionError,
    FlatTorus,
    ManifoldAtlas,
    RoundSphere,
    ScalarField,
    VectorField,
    directional,
    div,
    inner,
    laplace,
    second_directional,
)

SQRT2 = math.sqrt(2.0)


class FrameUsageError(ValueError):
    """A frame construction was requested on a manifold that cannot carry it."""


def gram_schmidt_frame(atlas: ManifoldAtlas, chart: str) -> Callable:
    """Pointwise h-orthonormal frame from the coordinate vectors of ``chart``.

    Returns ``E(x)`` of shape ``(d, d)`` whose row ``i`` holds the components
    of ``E_i``.  Degenerate metrics produce NaN rows, which
    :func:`check_frame_patch` turns into a ``ConstructionError``.
    """
    metric = atlas.metric_local(chart)
    d = atlas.dim

    def frame(x):
        h = metric(x)
        rows = []
        for i in range(d):
            v = jnp.eye(d)[i]
            for e in rows:
                v = v - (e @ h @ v) * e
            norm2 = v @ h @ v
            v = jnp.where(norm2 > 1e-24, v / jnp.sqrt(jnp.abs(norm2)), jnp.nan)
            rows.append(v)
        return jnp.stack(rows)

    return frame


def squared_partition(atlas: ManifoldAtlas) -> dict[str, Callable]:
    """``{chart: alpha_j}`` with ``alpha_j(chart, x)`` pointwise and ``sum alpha_j^2 = 1``."""
    return {name: atlas.partition_local(name) for name in atlas.chart_names}


@dataclass(frozen=True)
class FramePatch:
    chart: str
    frame: Callable  # x -> (d, d), rows are E_i in chart coordinates
    alpha: Callable  # (chart, x) -> alpha_j


def check_frame_patch(atlas: ManifoldAtlas, patch: FramePatch, x: np.ndarray) -> float:
    """Largest deviation of ``(E_i, E_k)_h`` from ``delta_ik`` over ``x``."""
    metric = atlas.metric_local(patch.chart)

    def gram(y):
        E = patch.frame(y)
        return E @ metric(y) @ E.T

    G = np.asarray(atlas.batched(("gram", patch.chart), gram)(np.atleast_2d(x)))
    if not np.all(np.isfinite(G)):
        raise ConstructionError(f"Gram-Schmidt lost rank in chart {patch.chart!r}")
    return float(np.max(np.abs(G - np.eye(atlas.dim))))


def check_partition(atlas: ManifoldAtlas, points: np.ndarray) -> float:
    """Largest ``|sum_j alpha_j^2 - 1|`` over ambient ``points``; raises on a cover gap."""
    worst = 0.0
    for chart, _, coords in atlas.locate(points):
        alphas = np.stack([atlas.partition(j, chart, coords) for j in atlas.chart_names])
        if np.any(np.max(alphas, axis=0) < 1e-8):
            raise ConstructionError("partition of unity leaves part of the manifold uncovered")
        worst = max(worst, float(np.max(np.abs(np.sum(alphas**2, axis=0) - 1.0))))
    return worst


@dataclass
class NoiseFrame:
    atlas: ManifoldAtlas
    fields: list[VectorField]
    kind: str
    patches: list[FramePatch] = field(default_factory=list)
    constant_components: np.ndarray | None = None  # (N, d) when every a_i is constant

    def __post_init__(self):
        self.div_a = [div(self.atlas, a) for a in self.fields]
        self.bar_a = [a * da for a, da in zip(self.fields, self.div_a)]

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    def components(self, chart: str, x, t: float = 0.0) -> np.ndarray:
        """All fields at ``x``: shape ``(m, N, d)``."""
        x = np.atleast_2d(x)
        if self.constant_components is not None:
            return np.broadcast_to(self.constant_components, (x.shape[0],) + self.constant_components.shape)
        return np.stack([a(chart, x, t) for a in self.fields], axis=1)

    def divergences(self, chart: str, x, t: float = 0.0) -> np.ndarray:
        """``div a_i`` at ``x``: shape ``(m, N)``."""
        x = np.atleast_2d(x)
        if self.constant_components is not None:
            return np.zeros((x.shape[0], self.n_fields))
        return np.stack([da(chart, x, t) for da in self.div_a], axis=1)


def build_partition_frame(atlas: ManifoldAtlas) -> NoiseFrame:
    """``a_{j,i} = sqrt(2) alpha_j E_{j,i}``, zero outside ``supp alpha_j``."""
    patches = [
        FramePatch(name, gram_schmidt_frame(atlas, name), atlas.partition_local(name))
        for name in atlas.chart_names
    ]
    fields = []
    for patch in patches:
        for i in range(atlas.dim):
            fields.append(VectorField(atlas, _patch_field(atlas, patch, i), f"a[{patch.chart},{i}]"))
    constant = None
    if isinstance(atlas, FlatTorus):
        constant = SQRT2 * np.eye(atlas.dim)
    kind = "coordinate_torus" if isinstance(atlas, FlatTorus) else "partition"
    return NoiseFrame(atlas, fields, kind, patches, constant)


def _patch_field(atlas: ManifoldAtlas, patch: FramePatch, i: int) -> Callable:
    home = patch.chart
    safe_point = jnp.ones(atlas.dim)

    def local(chart, x, t):
        alpha = patch.alpha(chart, x)
        if chart == home:
            return SQRT2 * alpha * patch.frame(x)[i]
        # evaluate in the home chart and push the vector forward; the bump is
        # exactly zero wherever the transition would be singular
        inside = alpha > 0.0
        xs = jnp.where(inside, x, safe_point)
        to_home = atlas.transition_local(chart, home)
        back_jacobian = atlas.transition_jacobian_local(home, chart)
        y = to_home(xs)
        comps = back_jacobian(y) @ patch.frame(y)[i]
        return jnp.where(inside, SQRT2 * alpha * comps, 0.0)

    return local


def build_embedded_sphere_frame(atlas: ManifoldAtlas) -> NoiseFrame:
    """Three projected ambient fields ``sqrt(2) (e_i - (e_i . p) p)`` on the unit sphere."""
    if not isinstance(atlas, RoundSphere):
        raise FrameUsageError("the embedded frame exists only on the unit sphere")
    fields = []
    for i in range(3):
        e = jnp.eye(3)[i]
        fields.append(
            VectorField.from_ambient(atlas, lambda p, t, e=e: SQRT2 * (e - (e @ p) * p), f"a[{i}]")
        )
    return NoiseFrame(atlas, fields, "embedded")


def build_coordinate_frame(atlas: ManifoldAtlas) -> NoiseFrame:
    """``a_i = sqrt(2) d_i`` on the flat torus."""
    if not isinstance(atlas, FlatTorus):
        raise FrameUsageError("the coordinate frame is global only on the flat torus")
    d = atlas.dim
    fields = [
        VectorField.constant_components(atlas, SQRT2 * np.eye(d)[i], f"a[{i}]") for i in range(d)
    ]
    return NoiseFrame(atlas, fields, "coordinate_torus", constant_components=SQRT2 * np.eye(d))


def build_frame(atlas: ManifoldAtlas, kind: str) -> NoiseFrame:
    """Frame from the config key ``frame.kind``."""
    if kind == "partition":
        return build_partition_frame(atlas)
    if kind == "embedded":
        return build_embedded_sphere_frame(atlas)
    if kind == "coordinate":
        return build_coordinate_frame(atlas)
    raise ValueError(f"unknown frame kind {kind!r}")


# ---------------------------------------------------------------------------
# derived operators and checks
# ---------------------------------------------------------------------------


def lambda_op(frame: NoiseFrame, i: int, psi: ScalarField) -> ScalarField:
    """``Lambda_i(psi) = div(div(psi a_i) a_i)``."""
    atlas = frame.atlas
    a = frame.fields[i]
    return div(atlas, a * div(atlas, a * psi))


def bar_a_apply(frame: NoiseFrame, i: int, psi: ScalarField) -> ScalarField:
    """``bar_a_i(psi) = (div a_i) a_i(psi)``."""
    return directional(frame.bar_a[i], psi)


def ellipticity_operator(frame: NoiseFrame, psi: ScalarField) -> ScalarField:
    """``1/2 sum a_i(a_i psi) - Delta psi + 1/2 sum bar_a_i(psi)`` (identically zero)."""
    atlas = frame.atlas
    terms = [0.5 * second_directional(a, psi) + 0.5 * bar_a_apply(frame, i, psi)
             for i, a in enumerate(frame.fields)]
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total - laplace(atlas, psi)


def ellipticity_residual(frame: NoiseFrame, psi: ScalarField, chart: str, x, t: float = 0.0) -> np.ndarray:
    """Absolute value of :func:`ellipticity_operator` at chart coordinates ``x``."""
    return np.abs(ellipticity_operator(frame, psi)(chart, x, t))


def ellipticity_residuals(frame: NoiseFrame, psis: list[ScalarField], chart: str, x, t: float = 0.0) -> np.ndarray:
    """Residuals of the identity for several test functions at once, shape ``(m, len(psis))``.

    Same quantity as :func:`ellipticity_residual`, but fused into a single
    compiled kernel so whole quadrature grids are cheap to check.
    """
    atlas = frame.atlas
    key = ("ellipticity", id(frame), tuple(id(p) for p in psis), chart)
    cached = atlas._cache.get(key)
    if cached is None or cached[0] is not frame or any(a is not b for a, b in zip(cached[1], psis)):
        metric = atlas.metric_local(chart)
        gamma = atlas.christoffel_local(chart)
        field_locals = [a.local for a in frame.fields]
        psi_locals = [p.local for p in psis]

        def kernel(y, s):
            def A(z):
                return jnp.stack([f(chart, z, s) for f in field_locals])

            def psi(z):
                return jnp.stack([f(chart, z, s) for f in psi_locals])

            def a_psi(z):  # (P, N)
                return jax.jacfwd(psi)(z) @ A(z).T

            def flux(z):  # sqrt|h| h^{-1} grad psi, (P, d)
                h = metric(z)
                g = jax.jacfwd(psi)(z)
                return jnp.sqrt(jnp.linalg.det(h)) * jnp.linalg.solve(h, g.T).T

            Ay = A(y)
            dA = jax.jacfwd(A)(y)  # (N, d, d): d_j a^k
            div_a = jnp.einsum("nkk->n", dA) + jnp.einsum("jkj,nk->n", gamma(y), Ay)
            second = jnp.einsum("pnj,nj->p", jax.jacfwd(a_psi)(y), Ay)
            drift = a_psi(y) @ div_a
            lap = jnp.einsum("pjj->p", jax.jacfwd(flux)(y)) / jnp.sqrt(jnp.linalg.det(metric(y)))
            return jnp.abs(0.5 * second + 0.5 * drift - lap)

        cached = (frame, list(psis), jax.jit(jax.vmap(kernel, in_axes=(0, None))))
        atlas._cache[key] = cached
    x = atlas.charts[chart].check(np.atleast_2d(x))
    return np.asarray(cached[2](x, float(t)))


def section_identity_error(frame: NoiseFrame, rng: np.random.Generator, m: int = 1000) -> float:
    """Max relative error of ``sum_i (X, a_i)_h^2 = 2 |X|_h^2`` over ``m`` random ``(x, X)``."""
    atlas = frame.atlas
    points = atlas.random_points(rng, m)
    worst = 0.0
    for chart, idx, coords in atlas.locate(points):
        h = np.asarray(atlas.batched(("h", chart), atlas.metric_local(chart))(coords))
        X = rng.normal(size=coords.shape)
        a = frame.components(chart, coords)  # (m, N, d)
        hX = np.einsum("mij,mj->mi", h, X)
        lhs = np.sum(np.einsum("mni,mi->mn", a, hX) ** 2, axis=1)
        norm2 = np.einsum("mi,mi->m", X, hX)
        worst = max(worst, float(np.max(np.abs(lhs - 2.0 * norm2) / norm2)))
    return worst


def polarization_error(frame: NoiseFrame, rng: np.random.Generator, m: int = 200) -> float:
    """Max ``|(A X, Y)_h - 2 (X, Y)_h|`` relative to ``|X|_h |Y|_h``."""
    atlas = frame.atlas
    points = atlas.random_points(rng, m)
    worst = 0.0
    for chart, idx, coords in atlas.locate(points):
        h = np.asarray(atlas.batched(("h", chart), atlas.metric_local(chart))(coords))
        X = rng.normal(size=coords.shape)
        Y = rng.normal(size=coords.shape)
        a = frame.components(chart, coords)
        ax = np.einsum("mni,mij,mj->mn", a, h, X)
        ay = np.einsum("mni,mij,mj->mn", a, h, Y)
        lhs = np.sum(ax * ay, axis=1)
        xy = np.einsum("mi,mij,mj->m", X, h, Y)
        nx = np.sqrt(np.einsum("mi,mij,mj->m", X, h, X))
        ny = np.sqrt(np.einsum("mi,mij,mj->m", Y, h, Y))
        worst = max(worst, float(np.max(np.abs(lhs - 2.0 * xy) / (nx * ny))))
    return worst


def psi_battery(atlas: ManifoldAtlas) -> list[ScalarField]:
    """Five smooth test functions used by the identity and residual checks."""
    if isinstance(atlas, RoundSphere):
        fns = [
            lambda p, t: p[2],
            lambda p, t: p[0] * p[1],
            lambda p, t: jnp.exp(p[0]),
            lambda p, t: p[0] ** 2 - p[2] + 0.3 * p[1] ** 3,
            lambda p, t: jnp.sin(2.0 * p[1] + p[2]),
        ]
    elif atlas.dim == 2:
        fns = [
            lambda p, t: jnp.sin(p[0]),
            lambda p, t: jnp.cos(p[0] + 2.0 * p[1]),
            lambda p, t: jnp.sin(p[0]) * jnp.cos(p[1]),
            lambda p, t: jnp.exp(jnp.sin(p[0]) + 0.5 * jnp.cos(p[1])),
            lambda p, t: jnp.cos(3.0 * p[0] - p[1]),
        ]
    else:
        fns = [
            lambda p, t: jnp.sin(p[0]),
            lambda p, t: jnp.cos(2.0 * p[0]),
            lambda p, t: jnp.exp(jnp.sin(p[0])),
            lambda p, t: jnp.sin(p[0]) ** 3,
            lambda p, t: jnp.cos(p[0]) / (2.0 + jnp.sin(p[0])),
        ]
    return [ScalarField.from_ambient(atlas, fn, f"psi{k}") for k, fn in enumerate(fns)]


__all__ = [
    "FramePatch",
    "FrameUsageError",
    "NoiseFrame",
    "bar_a_apply",
    "build_coordinate_frame",
    "build_embedded_sphere_frame",
    "build_frame",
    "build_partition_frame",
    "check_frame_patch",
    "check_partition",
    "ellipticity_operator",
    "ellipticity_residual",
    "ellipticity_residuals",
    "gram_schmidt_frame",
    "inner",
    "lambda_op",
    "polarization_error",
    "section_identity_error",
    "squared_partition",
    "psi_battery",
]
