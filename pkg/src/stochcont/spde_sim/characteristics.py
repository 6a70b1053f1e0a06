"""Stochastic characteristics: Stratonovich-Heun steps and particle transport.

Particles are pushed forward by ``dX = u dt + sum_i a_i(X) o dW^i`` and
carry the density exponent

    E(t) = - int_0^t div u(s, X_s) ds - sum_i int_0^t div a_i(X_s) o dW^i_s,

so that ``rho(t, X_t(y)) = exp(E(t)) rho_0(y)``.  The backward flow (the
foot map used by the grid solver) is the same step taken with
``direction=-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import FlatTorus, ManifoldAtlas, VectorField, div
from ..noise_frames import NoiseFrame

OVERFLOW_EXPONENT = 700.0


class ConcentrationOverflow(ArithmeticError):
    """The density exponent left the representable range."""


@dataclass(frozen=True)
class OverflowEvent:
    t: float
    index: int
    exponent: float


# ---------------------------------------------------------------------------
# velocity adapters
# ---------------------------------------------------------------------------


class Velocity:
    """Batched access to a drift: components and divergence in chart coordinates."""

    time_dependent: bool = False
    field: VectorField | None = None

    def value(self, chart: str, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def divergence(self, chart: str, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError


class ZeroVelocity(Velocity):
    def __init__(self, dim: int):
        self.dim = dim

    def value(self, chart, x, t):
        return np.zeros((np.atleast_2d(x).shape[0], self.dim))

    def divergence(self, chart, x, t):
        return np.zeros(np.atleast_2d(x).shape[0])


class FieldVelocity(Velocity):
    """Velocity given by a :class:`VectorField`; divergence through ``geometry.div``."""

    def __init__(self, u: VectorField, time_dependent: bool = True):
        self.field = u
        self.atlas = u.atlas
        self._div = div(u.atlas, u)
        self.time_dependent = time_dependent

    def value(self, chart, x, t):
        return self.field(chart, np.atleast_2d(x), t)

    def divergence(self, chart, x, t):
        return self._div(chart, np.atleast_2d(x), t)


def as_velocity(u, atlas: ManifoldAtlas) -> Velocity:
    if u is None:
        return ZeroVelocity(atlas.dim)
    if isinstance(u, Velocity):
        return u
    if isinstance(u, VectorField):
        return FieldVelocity(u)
    raise TypeError(f"cannot use {type(u).__name__} as a velocity")


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------


def _displacement(velocity, frame, chart, x, t, dW, dt):
    disp = velocity.value(chart, x, t) * dt
    if frame is not None and dW is not None and np.any(dW != 0.0):
        disp = disp + np.einsum("mnd,n->md", frame.components(chart, x), dW)
    return disp


def strat_step(atlas: ManifoldAtlas, chart: str, x, u, frame: NoiseFrame | None, dW, dt: float,
               t: float, direction: int = -1) -> np.ndarray:
    """One Stratonovich-Heun step for points ``x`` (shape ``(m, d)``) in ``chart``.

    ``direction=+1`` integrates ``dX = u dt + a o dW`` from ``t`` to ``t + dt``.
    ``direction=-1`` integrates ``dxi = -u dt - a o dW``, the flow whose
    trajectories are the backward characteristics.  Heun is exact for
    constant (additive) noise fields.
    """
    velocity = as_velocity(u, atlas)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dW = None if dW is None else np.asarray(dW, dtype=float)
    f1 = _displacement(velocity, frame, chart, x, t, dW, dt)
    pred = x + direction * f1
    f2 = _displacement(velocity, frame, chart, pred, t + direction * dt, dW, dt)
    out = x + direction * 0.5 * (f1 + f2)
    if isinstance(atlas, FlatTorus):
        out = np.mod(out, 2.0 * math.pi)
    return out


def exponent_increment(velocity: Velocity, frame: NoiseFrame | None, chart: str, x0, t0, x1, t1,
                       dW, dt: float) -> np.ndarray:
    """Trapezoidal (Stratonovich) increment of ``-int div u ds - sum int div a_i o dW``."""
    inc = -0.5 * (velocity.divergence(chart, x0, t0) + velocity.divergence(chart, x1, t1)) * dt
    if frame is not None and dW is not None and frame.constant_components is None:
        d0 = frame.divergences(chart, x0)
        d1 = frame.divergences(chart, x1)
        inc = inc - 0.5 * (d0 + d1) @ dW
    return inc


# ---------------------------------------------------------------------------
# particle ensembles
# ---------------------------------------------------------------------------


@dataclass
class ParticleEnsemble:
    """Particles with chart labels, coordinates, density exponents and initial densities."""

    atlas: ManifoldAtlas
    charts: np.ndarray  # (m,) index into atlas.chart_names
    coords: np.ndarray  # (m, d)
    exponent: np.ndarray  # (m,)
    rho0: np.ndarray  # (m,)
    t: float = 0.0
    overflow: list[OverflowEvent] = field(default_factory=list)

    @classmethod
    def from_points(cls, atlas: ManifoldAtlas, points, rho0=None) -> "ParticleEnsemble":
        """Seed particles at ambient points; ``rho0`` is a ScalarField, callable or array."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m = points.shape[0]
        charts = np.empty(m, dtype=int)
        coords = np.empty((m, atlas.dim))
        values = np.ones(m)
        for chart, idx, x in atlas.locate(points):
            k = atlas.chart_names.index(chart)
            charts[idx] = k
            coords[idx] = x
            if rho0 is not None and not isinstance(rho0, np.ndarray):
                values[idx] = rho0(chart, x)
        if isinstance(rho0, np.ndarray):
            values = np.asarray(rho0, dtype=float).copy()
        return cls(atlas, charts, coords, np.zeros(m), values)

    @property
    def count(self) -> int:
        return self.coords.shape[0]

    def density(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.exponent) * self.rho0

    def ambient(self) -> np.ndarray:
        out = np.empty((self.count, 3 if self.atlas.dim == 2 and not isinstance(self.atlas, FlatTorus)
                        else self.atlas.dim))
        for k, name in enumerate(self.atlas.chart_names):
            idx = np.nonzero(self.charts == k)[0]
            if idx.size:
                out[idx] = self.atlas.from_coords(name, self.coords[idx])
        return out

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.atlas, self.charts.copy(), self.coords.copy(),
                                self.exponent.copy(), self.rho0.copy(), self.t, list(self.overflow))


def switch_charts(atlas: ManifoldAtlas, charts: np.ndarray, coords: np.ndarray,
                  safe_radius: float = 2.0, hysteresis: float = 0.1):
    """Move points whose coordinates left ``safe_radius * (1 + hysteresis)`` to another chart."""
    names = atlas.chart_names
    if len(names) == 1:
        return charts, coords
    limit = safe_radius * (1.0 + hysteresis)
    charts = charts.copy()
    coords = coords.copy()
    far = np.linalg.norm(coords, axis=-1) > limit
    source = charts.copy()  # select on the charts before any switch so no point moves twice
    for k, name in enumerate(names):
        idx = np.nonzero(far & (source == k))[0]
        if idx.size == 0:
            continue
        target = names[1 - k]
        coords[idx] = atlas.transition(name, target, coords[idx])
        charts[idx] = 1 - k
    return charts, coords


def particle_step(ens: ParticleEnsemble, u, frame: NoiseFrame | None, dW, dt: float,
                  safe_radius: float = 2.0) -> ParticleEnsemble:
    """Advance particles one forward Heun step and accumulate their exponents."""
    atlas = ens.atlas
    velocity = as_velocity(u, atlas)
    charts, coords = ens.charts, ens.coords.copy()
    exponent = ens.exponent.copy()
    for k, name in enumerate(atlas.chart_names):
        idx = np.nonzero(charts == k)[0]
        if idx.size == 0:
            continue
        x0 = coords[idx]
        x1 = strat_step(atlas, name, x0, velocity, frame, dW, dt, ens.t, direction=+1)
        # the exponent needs the unwrapped endpoint on the torus only through
        # periodic fields, so wrapped coordinates are fine
        exponent[idx] += exponent_increment(velocity, frame, name, x0, ens.t, x1, ens.t + dt, dW, dt)
        coords[idx] = x1
    charts, coords = switch_charts(atlas, charts, coords, safe_radius)
    out = ParticleEnsemble(atlas, charts, coords, exponent, ens.rho0, ens.t + dt, list(ens.overflow))
    bad = ~np.isfinite(exponent) | (np.abs(exponent) > OVERFLOW_EXPONENT)
    for i in np.nonzero(bad)[0]:
        out.overflow.append(OverflowEvent(out.t, int(i), float(exponent[i])))
    return out


def evolve_characteristics(ens: ParticleEnsemble, u, frame: NoiseFrame | None, increments,
                           dt: float, safe_radius: float = 2.0, record_every: int = 0):
    """Run the particles along one Brownian path.

    ``increments`` has shape ``(n_steps, N)`` (or is None for deterministic
    transport with ``n_steps`` inferred from ``record_every``).  Returns the
    final ensemble and, if ``record_every > 0``, the list of snapshots taken
    every ``record_every`` steps (including the initial state).
    """
    increments = np.asarray(increments, dtype=float)
    snapshots = [ens.copy()] if record_every else []
    for k in range(increments.shape[0]):
        ens = particle_step(ens, u, frame, increments[k], dt, safe_radius)
        if record_every and (k + 1) % record_every == 0:
            snapshots.append(ens.copy())
    return ens, snapshots
