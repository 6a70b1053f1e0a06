"""Regularization of data: heat semigroup, flat vector smoothing, time mollification.

``P_tau`` acts spectrally: Fourier multipliers ``exp(-|k|^2 tau)`` on the
torus and ``exp(-l(l+1) tau)`` on spherical-harmonic coefficients of the
sphere, so the semigroup law holds to rounding.  Vector fields are smoothed
component-wise on the flat torus only; on the sphere the available path is
chart-wise mollification under the squared partition of unity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import jax.numpy as jnp
import numpy as np
from scipy import integrate as sp_integrate
from scipy import ndimage, special
from scipy.interpolate import RegularGridInterpolator

from .geometry import (
    TWO_PI,
    FlatTorus,
    ManifoldAtlas,
    RoundSphere,
    ScalarField,
    VectorField,
    div,
)


class UnsupportedManifoldError(NotImplementedError):
    """The requested operation is only available on the flat torus."""


class ResolutionWarning(UserWarning):
    """Time grid too coarse to resolve the mollifier."""


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


_BUMP_MASS = sp_integrate.quad(lambda s: float(_bump(np.array(s))), -1.0, 1.0, epsabs=1e-14)[0]


@dataclass(frozen=True)
class MollifierSpec:
    """Standard bump ``eta_tau(t) = eta(t / tau) / tau`` with unit mass and support ``[-tau, tau]``."""

    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("mollifier scale must be positive")

    def __call__(self, t) -> np.ndarray:
        return _bump(np.asarray(t, dtype=float) / self.tau) / (self.tau * _BUMP_MASS)

    def mass(self) -> float:
        return sp_integrate.quad(lambda t: float(self(t)), -self.tau, self.tau, epsabs=1e-14)[0]


# ---------------------------------------------------------------------------
# spectral bases
# ---------------------------------------------------------------------------


class TorusBasis:
    """Uniform ``n^d`` grid on ``T^d`` with FFT coefficients."""

    def __init__(self, n: int = 64, dim: int = 2):
        self.n = int(n)
        self.dim = dim
        self.h = TWO_PI / self.n
        ax = np.arange(self.n) * self.h
        self.axes = [ax] * dim
        grids = np.meshgrid(*self.axes, indexing="ij")
        self.nodes = np.stack(grids, axis=-1).reshape(-1, dim)
        k = np.fft.fftfreq(self.n, 1.0 / self.n)
        kk = np.meshgrid(*([k] * dim), indexing="ij")
        self.wavenumbers = np.stack(kk, axis=-1)  # (n,..,n,d)
        self.eigenvalues = np.sum(self.wavenumbers**2, axis=-1)
        self.shape = (self.n,) * dim

    @property
    def cell(self) -> float:
        return self.h**self.dim

    def sample(self, w) -> np.ndarray:
        if isinstance(w, ScalarField):
            return w("T", self.nodes).reshape(self.shape)
        w = np.asarray(w, dtype=float)
        return w.reshape(self.shape)

    def forward(self, values):
        return np.fft.fftn(np.asarray(values).reshape(self.shape))

    def inverse(self, coeffs):
        return np.real(np.fft.ifftn(coeffs))


class SphereBasis:
    """Gauss-Legendre x uniform grid with complex spherical harmonics up to ``l_max``."""

    def __init__(self, l_max: int = 32):
        self.l_max = int(l_max)
        nlat, nlon = self.l_max + 1, 2 * self.l_max + 2
        mu, wmu = np.polynomial.legendre.leggauss(nlat)
        self.theta = np.arccos(mu)[::-1]
        wmu = wmu[::-1]
        self.phi = np.arange(nlon) * TWO_PI / nlon
        T, P = np.meshgrid(self.theta, self.phi, indexing="ij")
        self.grid_theta, self.grid_phi = T.ravel(), P.ravel()
        self.weights = np.repeat(wmu, nlon) * (TWO_PI / nlon)
        self.nodes = angles_to_points(self.grid_theta, self.grid_phi)
        self.shape = (nlat, nlon)
        ls, ms = [], []
        for l in range(self.l_max + 1):
            for m in range(-l, l + 1):
                ls.append(l)
                ms.append(m)
        self.degrees = np.array(ls)
        self.orders = np.array(ms)
        self.eigenvalues = self.degrees * (self.degrees + 1.0)

    @cached_property
    def synthesis(self) -> np.ndarray:
        return self.harmonics(self.nodes)

    def harmonics(self, points) -> np.ndarray:
        theta, phi = points_to_angles(points)
        return special.sph_harm_y(
            self.degrees[None, :], self.orders[None, :], theta[:, None], phi[:, None]
        )

    def sample(self, w) -> np.ndarray:
        if isinstance(w, ScalarField):
            atlas = w.atlas
            out = np.empty(self.nodes.shape[0])
            for chart, idx, coords in atlas.locate(self.nodes):
                out[idx] = w(chart, coords)
            return out
        return np.asarray(w, dtype=float).ravel()

    def forward(self, values):
        return self.synthesis.conj().T @ (self.weights * np.asarray(values).ravel())

    def inverse(self, coeffs):
        return np.real(self.synthesis @ coeffs)


def angles_to_points(theta, phi) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def points_to_angles(points):
    points = np.atleast_2d(points)
    theta = np.arccos(np.clip(points[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(points[:, 1], points[:, 0]), TWO_PI)
    return theta, phi


def default_basis(atlas: ManifoldAtlas, resolution: int | None = None):
    if isinstance(atlas, FlatTorus):
        return TorusBasis(resolution or 64, atlas.dim)
    if isinstance(atlas, RoundSphere):
        return SphereBasis(resolution or 32)
    raise UnsupportedManifoldError(f"no spectral basis for {atlas.name}")


@dataclass
class SpectralField:
    """Scalar field held by its eigen-coefficients."""

    atlas: ManifoldAtlas
    basis: object
    coeffs: np.ndarray

    @property
    def values(self) -> np.ndarray:
        """Nodal values on the basis grid (flattened)."""
        return np.ravel(self.basis.inverse(self.coeffs))

    def evaluate(self, points) -> np.ndarray:
        """Values at ambient points (torus angles or unit vectors)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if isinstance(self.basis, SphereBasis):
            return np.real(self.basis.harmonics(points) @ self.coeffs)
        k = self.basis.wavenumbers.reshape(-1, self.basis.dim)
        c = self.coeffs.ravel() / self.coeffs.size
        phase = np.exp(1j * points @ k.T)
        return np.real(phase @ c)

    def to_scalar_field(self, tol: float = 1e-15) -> ScalarField:
        """Differentiable trigonometric polynomial (torus only)."""
        if not isinstance(self.basis, TorusBasis):
            raise UnsupportedManifoldError("closed-form evaluation is provided on the torus only")
        k = self.basis.wavenumbers.reshape(-1, self.basis.dim)
        c = self.coeffs.ravel() / self.coeffs.size
        keep = np.abs(c) > tol * max(np.max(np.abs(c)), 1e-300)
        k = jnp.asarray(k[keep], dtype=float)
        cr, ci = jnp.asarray(c[keep].real), jnp.asarray(c[keep].imag)

        def local(chart, x, t):
            arg = k @ x
            return jnp.sum(cr * jnp.cos(arg) - ci * jnp.sin(arg))

        return ScalarField(self.atlas, local, "spectral")

    def integral(self) -> float:
        if isinstance(self.basis, SphereBasis):
            return float(np.sum(self.basis.weights * self.values))
        return float(np.sum(self.values) * self.basis.cell)


def spectral_field(atlas: ManifoldAtlas, w, basis=None) -> SpectralField:
    basis = basis or default_basis(atlas)
    return SpectralField(atlas, basis, basis.forward(basis.sample(w)))


def heat_smooth_scalar(w, tau: float, atlas: ManifoldAtlas | None = None, basis=None) -> SpectralField:
    """``P_tau w`` as a spectral field.

    ``w`` may be a ScalarField, nodal values on ``basis`` or a SpectralField.
    """
    if tau < 0:
        raise ValueError("heat smoothing time must be nonnegative")
    if isinstance(w, SpectralField):
        field = w
    else:
        atlas = atlas or w.atlas
        field = spectral_field(atlas, w, basis)
    lam = field.basis.eigenvalues
    return SpectralField(field.atlas, field.basis, field.coeffs * np.exp(-lam * tau).reshape(field.coeffs.shape))


def heat_smooth_vector_flat(u: VectorField, tau: float, basis: TorusBasis | None = None) -> VectorField:
    """Component-wise ``P_tau`` of a vector field on the flat torus."""
    atlas = u.atlas
    if not isinstance(atlas, FlatTorus):
        raise UnsupportedManifoldError(
            "vector smoothing through the heat semigroup is only available on the flat torus"
        )
    if tau < 0:
        raise ValueError("heat smoothing time must be nonnegative")
    basis = basis or TorusBasis(64, atlas.dim)
    comps = u("T", basis.nodes)
    smoothed = [
        heat_smooth_scalar(comps[:, i], tau, atlas, basis).to_scalar_field() for i in range(atlas.dim)
    ]
    locals_ = [s.local for s in smoothed]
    return VectorField(atlas, lambda c, x, t: jnp.stack([f(c, x, t) for f in locals_]), "E_tau u")


def commutation_error(u: VectorField, tau: float, basis: TorusBasis | None = None) -> float:
    """Max nodal ``|div(E_tau u) - P_tau(div u)|`` on the torus grid."""
    atlas = u.atlas
    basis = basis or TorusBasis(64, atlas.dim)
    lhs = div(atlas, heat_smooth_vector_flat(u, tau, basis))("T", basis.nodes)
    rhs = heat_smooth_scalar(div(atlas, u)("T", basis.nodes), tau, atlas, basis).values
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------------------
# time mollification and the smoothed velocity
# ---------------------------------------------------------------------------


def time_mollify(values, t_grid, tau: float, extension: str = "zero") -> np.ndarray:
    """Convolve samples on a uniform time grid with ``eta_tau``.

    ``values`` has time along axis 0.  Outside the grid the signal is
    extended by zero (``"zero"``) or by its end values (``"edge"``).  The
    discrete kernel is renormalized to unit mass so constants are kept
    exactly wherever the extension agrees with them.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    values = np.asarray(values, dtype=float)
    dt = t_grid[1] - t_grid[0]
    if not np.allclose(np.diff(t_grid), dt, rtol=1e-9, atol=0.0):
        raise ValueError("time grid must be uniform")
    if dt > tau / 4.0:
        warnings.warn(
            f"time step {dt:g} is coarse for mollifier scale {tau:g}", ResolutionWarning, stacklevel=2
        )
    half = int(math.ceil(tau / dt))
    offsets = np.arange(-half, half + 1) * dt
    kernel = MollifierSpec(tau)(offsets)
    kernel = kernel / kernel.sum()
    mode = {"zero": "constant", "edge": "nearest"}[extension]
    weights = kernel[::-1].reshape((-1,) + (1,) * (values.ndim - 1))
    return ndimage.convolve(values, weights, mode=mode, cval=0.0)


class SmoothedVelocity:
    """``u_tau(t) = int E_tau u(t') eta_tau(t - t') dt'`` with ``u = 0`` outside ``[0, T]``.

    The time integral uses Gauss-Legendre on ``[t - tau, t + tau] cap [0, T]``.
    """

    def __init__(self, u: VectorField, tau: float, T: float, basis: TorusBasis | None = None,
                 n_gauss: int = 24):
        if not tau > 0:
            raise ValueError("smoothing scale must be positive")
        if not isinstance(u.atlas, FlatTorus):
            raise UnsupportedManifoldError("the smoothed velocity is built on the flat torus")
        self.u = u
        self.tau = tau
        self.T = T
        self.basis = basis or TorusBasis(64, u.atlas.dim)
        self.n_gauss = n_gauss
        self.eta = MollifierSpec(tau)

    def _time_nodes(self, t):
        lo, hi = max(t - self.tau, 0.0), min(t + self.tau, self.T)
        if hi <= lo:
            return np.zeros(0), np.zeros(0)
        s, w = np.polynomial.legendre.leggauss(self.n_gauss)
        tp = 0.5 * (hi - lo) * s + 0.5 * (hi + lo)
        return tp, 0.5 * (hi - lo) * w * self.eta(t - tp)

    def nodal(self, t: float) -> np.ndarray:
        """Components of ``u_tau(t)`` on the basis grid, shape ``(n^d, d)``."""
        basis = self.basis
        d = basis.dim
        out = np.zeros((basis.nodes.shape[0], d))
        tp, w = self._time_nodes(t)
        for s, ws in zip(tp, w):
            comps = self.u("T", basis.nodes, s)
            for i in range(d):
                out[:, i] += ws * heat_smooth_scalar(comps[:, i], self.tau, self.u.atlas, basis).values
        return out

    def at(self, t: float) -> VectorField:
        comps = self.nodal(t)
        fields = [
            spectral_field(self.u.atlas, comps[:, i], self.basis).to_scalar_field()
            for i in range(self.basis.dim)
        ]
        locals_ = [f.local for f in fields]
        return VectorField(self.u.atlas, lambda c, x, s: jnp.stack([f(c, x, s) for f in locals_]), "u_tau")


def smooth_velocity(u: VectorField, tau: float, T: float, basis: TorusBasis | None = None) -> SmoothedVelocity:
    return SmoothedVelocity(u, tau, T, basis)


# ---------------------------------------------------------------------------
# chart-wise mollification (sphere)
# ---------------------------------------------------------------------------


def chart_mollify(atlas: ManifoldAtlas, w: ScalarField, tau: float, n: int = 128):
    """``sum_j (alpha_j^2 w) * rho_tau`` computed in each chart's coordinates.

    Returns a function of ambient points.  Each chart contribution is a
    Gaussian-free compact bump convolution of radius ``tau`` (coordinate
    units) on a uniform grid, then interpolated linearly.
    """
    if not tau > 0:
        raise ValueError("mollification radius must be positive")
    R = getattr(atlas, "quad_radius", math.pi)
    ax = np.linspace(-R - 2 * tau, R + 2 * tau, n)
    hx = ax[1] - ax[0]
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)
    half = int(math.ceil(tau / hx))
    off = np.arange(-half, half + 1) * hx
    OX, OY = np.meshgrid(off, off, indexing="ij")
    kernel = _bump(np.hypot(OX, OY) / tau)
    kernel /= kernel.sum()
    interps = {}
    for chart in atlas.chart_names:
        alpha2 = atlas.partition(chart, chart, nodes) ** 2
        vals = (alpha2 * w(chart, nodes)).reshape(n, n)
        smooth = ndimage.convolve(vals, kernel, mode="constant", cval=0.0)
        interps[chart] = RegularGridInterpolator((ax, ax), smooth, bounds_error=False, fill_value=0.0)

    def evaluate(points):
        points = np.atleast_2d(points)
        out = np.zeros(points.shape[0])
        for chart in atlas.chart_names:
            member = atlas.charts[chart].contains(points)
            coords = atlas.to_coords(chart, points[member])
            out[member] += interps[chart](coords)
        return out

    return evaluate
