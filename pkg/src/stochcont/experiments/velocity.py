"""Closed-form velocity families for the torus experiments.

The concentrating family is ``u = -grad V`` with a radial potential around a
marked point ``x*``: for ``r = |x - x*|``

    g(r) = c r_cap^{-alpha} r^2 / 2                                  (r <= r_cap)
    g(r) = c [r_cap^{2-alpha} / 2 + (r^{2-alpha} - r_cap^{2-alpha}) / (2 - alpha)]   (r > r_cap)
    u    = -zeta(r) g(r) / r * e_r,

where ``zeta`` switches off smoothly between ``r1`` and ``r0``.  Then
``div u = -(zeta c m(r) + zeta' g / r)`` with ``m = r^{-alpha}`` outside the
cap and ``r_cap^{-alpha}`` inside, so ``|div u| ~ c r^{-alpha}`` near ``x*``:
in ``L^p`` for ``alpha p < 2`` and unbounded once the cap shrinks to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..spde_sim.characteristics import Velocity

TWO_PI = 2.0 * math.pi


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def _dsmoothstep(t):
    inside = (t > 0.0) & (t < 1.0)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * t * t * (1.0 - t) ** 2, 0.0)


@dataclass
class CappedSinkVelocity(Velocity):
    """Radial sink on the flat 2-torus with ``|div u| ~ c |x - x*|^{-alpha}`` capped at ``cap``."""

    strength: float = 6.0
    alpha: float = 0.3
    cap: float = 0.1
    center: tuple[float, float] = (math.pi, math.pi)
    r_outer: float = 1.2
    r_inner: float = 0.8
    time_dependent: bool = False

    def __post_init__(self):
        if not 0.0 < self.cap < self.r_inner < self.r_outer < math.pi:
            raise ValueError("need 0 < cap < r_inner < r_outer < pi")
        if not 0.0 <= self.alpha < 2.0:
            raise ValueError("alpha must lie in [0, 2)")

    def _offsets(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = np.mod(x - np.asarray(self.center) + math.pi, TWO_PI) - math.pi
        r = np.sqrt(np.sum(d * d, axis=1))
        return d, r

    def _profile(self, r):
        c, a, rc = self.strength, self.alpha, self.cap
        inner = c * rc ** (-a) * r * r / 2.0
        outer = c * (rc ** (2.0 - a) / 2.0 + (np.maximum(r, rc) ** (2.0 - a) - rc ** (2.0 - a)) / (2.0 - a))
        g = np.where(r <= rc, inner, outer)
        m = np.where(r <= rc, rc ** (-a), np.maximum(r, rc) ** (-a))
        t = (r - self.r_inner) / (self.r_outer - self.r_inner)
        zeta = 1.0 - _smoothstep(t)
        dzeta = -_dsmoothstep(t) / (self.r_outer - self.r_inner)
        return g, m, zeta, dzeta

    def value(self, chart, x, t=0.0):
        d, r = self._offsets(x)
        g, _, zeta, _ = self._profile(r)
        safe = np.where(r > 0.0, r, 1.0)
        coef = np.where(r > 0.0, -zeta * g / (safe * safe), 0.0)
        return coef[:, None] * d

    def divergence(self, chart, x, t=0.0):
        _, r = self._offsets(x)
        g, m, zeta, dzeta = self._profile(r)
        safe = np.where(r > 0.0, r, 1.0)
        return -(zeta * self.strength * m + np.where(r > 0.0, dzeta * g / safe, 0.0))

    def sup_speed(self) -> float:
        r = np.linspace(0.0, self.r_outer, 20_001)
        g, _, zeta, _ = self._profile(r)
        return float(np.max(zeta * g / np.where(r > 0, r, 1.0) * (r > 0)))


def capped_sink_for_grid(n: int, strength: float = 6.0, alpha: float = 0.3, cap_cells: float = 2.0,
                         **kw) -> CappedSinkVelocity:
    """The sink with its cap at ``cap_cells`` grid spacings of an ``n``-point periodic grid."""
    return CappedSinkVelocity(strength=strength, alpha=alpha, cap=cap_cells * TWO_PI / n, **kw)


@dataclass
class SinFlowVelocity(Velocity):
    """``u = eps sin(x^1) e_1``: ``div u = eps cos(x^1)``; flow ``tan(x/2) -> tan(x/2) e^{eps t}``."""

    eps: float = 0.5
    time_dependent: bool = False

    def value(self, chart, x, t=0.0):
        x = np.atleast_2d(x)
        out = np.zeros_like(x, dtype=float)
        out[:, 0] = self.eps * np.sin(x[:, 0])
        return out

    def divergence(self, chart, x, t=0.0):
        x = np.atleast_2d(x)
        return self.eps * np.cos(x[:, 0])

    def flow(self, x0, t):
        """Exact position at time ``t`` of the particle started at ``x0`` (first coordinate)."""
        return 2.0 * np.arctan2(np.sin(x0 / 2.0) * math.exp(self.eps * t), np.cos(x0 / 2.0))

    def inverse_flow(self, x, t):
        return self.flow(x, -t)


@dataclass
class ShearVelocity(Velocity):
    """Divergence-free shear ``u = (A sin x^2, B sin x^1)``."""

    A: float = 1.0
    B: float = 0.5
    time_dependent: bool = False

    def value(self, chart, x, t=0.0):
        x = np.atleast_2d(x)
        return np.stack([self.A * np.sin(x[:, 1]), self.B * np.sin(x[:, 0])], axis=1)

    def divergence(self, chart, x, t=0.0):
        return np.zeros(np.atleast_2d(x).shape[0])


def divergence_norms(velocity: Velocity, n: int, p: float = 5.0, T: float = 1.0) -> dict[str, float]:
    """``||div u||_{L^p([0,T] x T^2)}`` by nodal quadrature and the nodal sup on an ``n``-grid."""
    h = TWO_PI / n
    ax = np.arange(n) * h
    X = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    dv = np.abs(velocity.divergence("T", X, 0.0))
    return {"Lp": float((T * np.sum(dv**p) * h * h) ** (1.0 / p)), "Linf": float(np.max(dv))}


def velocity_from_config(cfg: dict, n: int) -> Velocity | None:
    """Build a velocity from flat config keys (``velocity = none | sink | sinflow | shear``)."""
    kind = cfg.get("velocity", "none")
    if kind == "none":
        return None
    if kind == "sink":
        return capped_sink_for_grid(n, strength=float(cfg.get("strength", 6.0)),
                                    alpha=float(cfg.get("alpha", 0.3)),
                                    cap_cells=float(cfg.get("cap_cells", 2.0)))
    if kind == "sinflow":
        return SinFlowVelocity(eps=float(cfg.get("eps", 0.5)))
    if kind == "shear":
        return ShearVelocity(A=float(cfg.get("shear_a", 1.0)), B=float(cfg.get("shear_b", 0.5)))
    raise ValueError(f"unknown velocity family {kind!r}")
