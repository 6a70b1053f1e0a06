"""Discrete residuals of the Itô weak and renormalized formulations.

For a test function ``psi`` every spatial coefficient that multiplies
``rho`` (or ``F(rho)``, ``G_F(rho)``, ...) is sampled once per time level
on the active grid nodes; time integrals are left-point (Itô) sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from ..geometry import ScalarField
from ..noise_frames import NoiseFrame
from .characteristics import Velocity, as_velocity
from .solver import Trajectory


class IdentityRenormalization:
    """``F(xi) = xi``: ``G_F = 0`` and ``F'' = 0``."""

    def F(self, xi):
        return np.asarray(xi, dtype=float)

    def dF(self, xi):
        return np.ones_like(np.asarray(xi, dtype=float))

    def d2F(self, xi):
        return np.zeros_like(np.asarray(xi, dtype=float))

    def G(self, xi):
        return np.zeros_like(np.asarray(xi, dtype=float))


@dataclass
class TermSamples:
    """Spatial coefficients of one test function at one time level, per chart (active nodes)."""

    psi: dict
    dpsi_dt: dict
    grad_psi: dict  # (m, d)
    a_psi: dict  # (m, N)
    half_aa_psi: dict  # 1/2 sum a_i(a_i psi)
    laplace_psi: dict
    bar_a_psi: dict  # (m, N)
    div_a: dict  # (m, N)
    lambda_one: dict  # (m, N)
    aa_psi: dict  # (m, N, N), [j, i] = a_j(a_i psi)
    a_div_psi: dict  # (m, N, N), [j, i] = a_j((div a_i) psi)


def _term_kernel(atlas, frame: NoiseFrame | None, psi: ScalarField, chart: str):
    frame = frame if frame is not None else _NO_FRAME
    key = ("terms", id(frame), id(psi), chart)
    cached = atlas._cache.get(key)
    if cached is not None and cached[0] is frame and cached[1] is psi:
        return cached[2]
    metric = atlas.metric_local(chart)
    gamma = atlas.christoffel_local(chart)
    field_locals = [a.local for a in frame.fields] if frame.fields else []
    d = atlas.dim

    def kernel(y, s):
        def A(z):
            if not field_locals:
                return jnp.zeros((0, d)) + 0.0 * z[0]
            return jnp.stack([f(chart, z, s) for f in field_locals])

        def p(z):
            return psi.local(chart, z, s)

        def div_fields(z):  # (N,)
            return jnp.einsum("nkk->n", jax.jacfwd(A)(z)) + jnp.einsum("jkj,nk->n", gamma(z), A(z))

        def bar_a(z):  # (N, d)
            return div_fields(z)[:, None] * A(z)

        def a_p(z):
            return A(z) @ jax.grad(p)(z)

        def flux(z):
            h = metric(z)
            return jnp.sqrt(jnp.linalg.det(h)) * jnp.linalg.solve(h, jax.grad(p)(z))

        def div_p(z):
            return div_fields(z) * p(z)

        Ay = A(y)
        g = jax.grad(p)(y)
        J = jax.jacfwd(a_p)(y)  # (N, d)
        d_bar = jax.jacfwd(bar_a)(y)  # (N, d, d)
        lam1 = jnp.einsum("nkk->n", d_bar) + jnp.einsum("jkj,nk->n", gamma(y), bar_a(y))
        return dict(
            psi=p(y),
            dpsi_dt=jax.grad(lambda r: psi.local(chart, y, r))(s),
            grad_psi=g,
            a_psi=Ay @ g,
            half_aa_psi=0.5 * jnp.einsum("nj,nj->", J, Ay),
            laplace_psi=jnp.trace(jax.jacfwd(flux)(y)) / jnp.sqrt(jnp.linalg.det(metric(y))),
            bar_a_psi=bar_a(y) @ g,
            div_a=div_fields(y),
            lambda_one=lam1,
            aa_psi=Ay @ J.T,
            a_div_psi=Ay @ jax.jacfwd(div_p)(y).T,
        )

    fn = jax.jit(jax.vmap(kernel, in_axes=(0, None)))
    # the objects are kept alive with the kernel so their ids cannot be reused
    atlas._cache[key] = (frame, psi, fn)
    return fn


class _NoFrame:
    fields: list = []
    n_fields = 0


_NO_FRAME = _NoFrame()


def sample_terms(grid, frame: NoiseFrame | None, psi: ScalarField, t: float) -> TermSamples:
    out = {k: {} for k in TermSamples.__dataclass_fields__}
    for chart in grid.charts:
        x = grid.nodes[chart][grid.active[chart]]
        vals = _term_kernel(grid.atlas, frame, psi, chart)(x, float(t))
        for k in out:
            out[k][chart] = np.asarray(vals[k])
    return TermSamples(**out)


def _active(grid, values):
    return {c: np.ravel(values[c])[grid.active[c]] for c in grid.charts}


def _integrate(grid, f) -> float:
    return float(sum(np.sum(f[c] * grid.weights[c][grid.active[c]]) for c in grid.charts))


def _integrate_nodes(grid, f) -> np.ndarray:
    """Quadrature over the leading (node) axis only."""
    return sum(np.tensordot(grid.weights[c][grid.active[c]], f[c], axes=(0, 0)) for c in grid.charts)


def _iterated(dW: np.ndarray, dt: float) -> np.ndarray:
    """Symmetric part ``1/2 (dW_j dW_i - delta_ij dt)`` of the double Itô integrals over one step."""
    return 0.5 * (np.outer(dW, dW) - dt * np.eye(dW.size))


def _check_quadrature(noise_quadrature: str) -> None:
    if noise_quadrature not in ("milstein", "left"):
        raise ValueError(f"unknown noise quadrature {noise_quadrature!r}")


def renormalized_residual(traj: Trajectory, psi: ScalarField, F, u, frame: NoiseFrame | None,
                          time_dependent_psi: bool = False, noise_quadrature: str = "milstein") -> np.ndarray:
    """Residual of the renormalized Itô weak form at every time level.

    ``F`` provides ``F, dF, d2F, G`` (vectorized).  ``R[0] = 0``; ``R[K]``
    compares ``int F(rho_K) psi(t_K)`` with the left-point assembly of the
    nine right-hand-side terms over ``[0, t_K]`` (the ``d_t psi`` term is
    active for time-dependent test functions).

    The stochastic sum is left-point.  With ``noise_quadrature="milstein"``
    each step also carries the iterated-integral term, so the sum converges
    pathwise at first order when the frame fields commute; the plain
    left-point sum is only of order 1/2.
    """
    _check_quadrature(noise_quadrature)
    grid = traj.grid
    velocity: Velocity = as_velocity(u, grid.atlas)
    inc = traj.increments
    n_steps = len(traj.states) - 1
    if n_steps != inc.shape[0]:
        raise ValueError("residuals need the stored trajectory at every step")
    static = None
    dt = traj.dt
    noisy = frame is not None and inc.shape[1] > 0
    R = np.zeros(n_steps + 1)
    acc = 0.0
    first = None
    for k, state in enumerate(traj.states):
        t = state.t
        if static is None or time_dependent_psi:
            terms = sample_terms(grid, frame, psi, t)
            if not time_dependent_psi:
                static = terms
        else:
            terms = static
        rho = _active(grid, state.values)
        Fr = {c: F.F(r) for c, r in rho.items()}
        current = _integrate(grid, {c: Fr[c] * terms.psi[c] for c in grid.charts})
        if first is None:
            first = current
        R[k] = current - first - acc
        if k == n_steps:
            break
        Gr = {c: F.G(r) for c, r in rho.items()}
        d2 = {c: F.d2F(r) for c, r in rho.items()}
        drift = {}
        noise = {}
        second = {}
        for c in grid.charts:
            x = grid.nodes[c][grid.active[c]]
            uval = velocity.value(c, x, t)
            u_psi = np.einsum("md,md->m", uval, terms.grad_psi[c])
            div_u = velocity.divergence(c, x, t)
            da = terms.div_a[c]
            drift[c] = Fr[c] * (u_psi + terms.dpsi_dt[c]) - Gr[c] * div_u * terms.psi[c]
            if noisy:
                drift[c] += (
                    Fr[c] * terms.half_aa_psi[c]
                    - 0.5 * Gr[c] * np.sum(terms.lambda_one[c], axis=1) * terms.psi[c]
                    + 0.5 * d2[c] * np.sum((rho[c][:, None] * da) ** 2, axis=1) * terms.psi[c]
                    - Gr[c] * np.sum(terms.bar_a_psi[c], axis=1)
                )
                noise[c] = Fr[c][:, None] * terms.a_psi[c] - (Gr[c] * terms.psi[c])[:, None] * da
                if noise_quadrature == "milstein":
                    GG = rho[c] ** 2 * d2[c] - Gr[c]  # G of G_F
                    second[c] = (
                        Fr[c][:, None, None] * terms.aa_psi[c]
                        - Gr[c][:, None, None] * (da[:, :, None] * terms.a_psi[c][:, None, :] + terms.a_div_psi[c])
                        + (GG * terms.psi[c])[:, None, None] * da[:, :, None] * da[:, None, :]
                    )
        acc += _integrate(grid, drift) * dt
        if noisy:
            noise_int = np.array([
                _integrate(grid, {c: noise[c][:, i] for c in grid.charts}) for i in range(frame.n_fields)
            ])
            acc += float(noise_int @ inc[k])
            if noise_quadrature == "milstein":
                acc += float(np.sum(_integrate_nodes(grid, second) * _iterated(inc[k], dt)))
    return R


def weak_residual(traj: Trajectory, psi: ScalarField, u, frame: NoiseFrame | None,
                  time_dependent_psi: bool = False, noise_quadrature: str = "milstein") -> np.ndarray:
    """Residual of the Itô weak form with the elliptic frame:

    ``int rho(t) psi - int rho_0 psi - sum [int rho (u(psi) - 1/2 sum bar_a_i(psi)) dt
    + sum_i int rho a_i(psi) dW^i + int rho Laplace(psi) dt]``.

    ``noise_quadrature`` as in :func:`renormalized_residual`.
    """
    _check_quadrature(noise_quadrature)
    grid = traj.grid
    velocity = as_velocity(u, grid.atlas)
    inc = traj.increments
    n_steps = len(traj.states) - 1
    if n_steps != inc.shape[0]:
        raise ValueError("residuals need the stored trajectory at every step")
    dt = traj.dt
    noisy = frame is not None and inc.shape[1] > 0
    R = np.zeros(n_steps + 1)
    static = None
    acc = 0.0
    first = None
    for k, state in enumerate(traj.states):
        t = state.t
        if static is None or time_dependent_psi:
            terms = sample_terms(grid, frame, psi, t)
            if not time_dependent_psi:
                static = terms
        else:
            terms = static
        rho = _active(grid, state.values)
        current = _integrate(grid, {c: rho[c] * terms.psi[c] for c in grid.charts})
        if first is None:
            first = current
        R[k] = current - first - acc
        if k == n_steps:
            break
        drift = {}
        for c in grid.charts:
            x = grid.nodes[c][grid.active[c]]
            u_psi = np.einsum("md,md->m", velocity.value(c, x, t), terms.grad_psi[c])
            drift[c] = rho[c] * (u_psi + terms.dpsi_dt[c])
            if noisy:
                drift[c] += rho[c] * (terms.laplace_psi[c] - 0.5 * np.sum(terms.bar_a_psi[c], axis=1))
        acc += _integrate(grid, drift) * dt
        if noisy:
            noise = np.array([
                _integrate(grid, {c: rho[c] * terms.a_psi[c][:, i] for c in grid.charts})
                for i in range(frame.n_fields)
            ])
            acc += float(noise @ inc[k])
            if noise_quadrature == "milstein":
                second = _integrate_nodes(grid, {c: rho[c][:, None, None] * terms.aa_psi[c] for c in grid.charts})
                acc += float(np.sum(second * _iterated(inc[k], dt)))
    return R


def stratonovich_residual(traj: Trajectory, psi: ScalarField, u, frame: NoiseFrame | None) -> np.ndarray:
    """Diagnostic: the Stratonovich weak form with trapezoidal sums (time-independent ``psi``)."""
    grid = traj.grid
    velocity = as_velocity(u, grid.atlas)
    inc = traj.increments
    terms = sample_terms(grid, frame, psi, 0.0)
    dt = traj.dt
    A, B, cur = [], [], []
    for state in traj.states:
        rho = _active(grid, state.values)
        t = state.t
        drift = {}
        for c in grid.charts:
            x = grid.nodes[c][grid.active[c]]
            drift[c] = rho[c] * np.einsum("md,md->m", velocity.value(c, x, t), terms.grad_psi[c])
        A.append(_integrate(grid, drift))
        n_fields = frame.n_fields if frame is not None else 0
        B.append([_integrate(grid, {c: rho[c] * terms.a_psi[c][:, i] for c in grid.charts})
                  for i in range(n_fields)])
        cur.append(_integrate(grid, {c: rho[c] * terms.psi[c] for c in grid.charts}))
    A, B, cur = np.array(A), np.array(B), np.array(cur)
    steps = 0.5 * (A[1:] + A[:-1]) * dt
    if frame is not None and inc.shape[1]:
        steps = steps + np.einsum("ki,ki->k", 0.5 * (B[1:] + B[:-1]), inc)
    return cur - cur[0] - np.concatenate([[0.0], np.cumsum(steps)])
