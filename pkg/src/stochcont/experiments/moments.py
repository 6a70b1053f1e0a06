"""Monte-Carlo L2 moments and Gronwall fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import FlatTorus, build_atlas
from ..noise_frames import build_frame
from ..smoothing import TorusBasis, heat_smooth_scalar
from ..spde_sim import build_grid, pathwise_solve, sample_brownian
from .config import ExperimentConfig
from .fast_torus import AdditiveNoiseTorusSolver
from .velocity import velocity_from_config


class FitError(ValueError):
    """The series cannot be fitted (nonpositive values or too few points)."""


@dataclass
class GronwallFit:
    """``log Phi(t) ~ log Phi0 + K t`` by least squares, plus the tight envelope rate.

    ``K_envelope`` is the smallest ``K`` with ``Phi(t) <= Phi(0) exp(K t)`` on the series.
    """

    phi0: float
    K: float
    residual: float
    K_envelope: float

    def bound(self, t) -> np.ndarray:
        return self.phi0 * np.exp(self.K * np.asarray(t))


def gronwall_fit(times, phi) -> GronwallFit:
    t = np.asarray(times, dtype=float)
    y = np.asarray(phi, dtype=float)
    if t.shape != y.shape or t.size < 2:
        raise FitError("need matching time and value series with at least two points")
    if not np.all(np.isfinite(y)) or np.any(y <= 0.0):
        raise FitError("Gronwall fit needs a finite positive series")
    logy = np.log(y)
    A = np.stack([np.ones_like(t), t], axis=1)
    coef, *_ = np.linalg.lstsq(A, logy, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - logy) ** 2)))
    later = t > t[0]
    env = float(np.max((logy[later] - logy[0]) / (t[later] - t[0]))) if np.any(later) else 0.0
    return GronwallFit(float(math.exp(coef[0])), float(coef[1]), resid, max(env, 0.0))


@dataclass
class MomentSeries:
    """Path-wise ``int rho^2`` and mass on every time level, with Monte-Carlo summaries."""

    times: np.ndarray
    phi_paths: np.ndarray  # (P, K + 1)
    mass_paths: np.ndarray
    overflow: list = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return self.phi_paths.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return np.mean(self.phi_paths, axis=0)

    @property
    def stderr(self) -> np.ndarray:
        if self.n_paths < 2:
            return np.zeros(self.phi_paths.shape[1])
        return np.std(self.phi_paths, axis=0, ddof=1) / math.sqrt(self.n_paths)

    def at(self, t: float) -> tuple[float, float]:
        k = int(np.argmin(np.abs(self.times - t)))
        return float(self.mean[k]), float(self.stderr[k])


def initial_density(cfg: ExperimentConfig, grid) -> dict[str, np.ndarray]:
    """Nodal initial data per chart, heat-smoothed when ``cfg.tau > 0``."""

    def base(chart, x):
        if cfg.rho0 == "one":
            return np.ones(len(x))
        if isinstance(grid.atlas, FlatTorus):
            if cfg.rho0 == "cos":
                return 1.0 + 0.5 * np.cos(x[:, 0])
            d = np.mod(x - math.pi + math.pi, 2 * math.pi) - math.pi
            return np.exp(-np.sum(d * d, axis=1) / 0.5)
        p = grid.atlas.from_coords(chart, x)
        if cfg.rho0 == "cos":
            return 1.0 + 0.5 * p[:, 2]
        return np.exp(-np.sum((p - np.array([0.0, 0.0, 1.0])) ** 2, axis=1) / 0.5)

    values = grid.sample(base)
    if cfg.tau > 0:
        if not isinstance(grid.atlas, FlatTorus):
            raise ValueError("initial smoothing is implemented on the torus grid")
        basis = TorusBasis(grid.n, grid.dim)
        sm = heat_smooth_scalar(values["T"].ravel(), cfg.tau, grid.atlas, basis)
        values = {"T": sm.values.reshape(grid.shape)}
    return values


def uses_fast_solver(cfg: ExperimentConfig) -> bool:
    return cfg.manifold == "torus2" and (cfg.frame == "coordinate" or not cfg.noise)


def run_moments(cfg: ExperimentConfig) -> MomentSeries:
    """All paths of ``cfg``; deterministic runs use a single path."""
    atlas = build_atlas(cfg.manifold)
    grid = build_grid(atlas, cfg.n)
    velocity = velocity_from_config(cfg.as_dict(), cfg.n)
    rho0 = initial_density(cfg, grid)
    n_steps = int(round(cfg.T / cfg.dt))
    times = np.arange(n_steps + 1) * cfg.dt
    if uses_fast_solver(cfg):
        solver = AdditiveNoiseTorusSolver(cfg.n, velocity, cfg.dt)
        if cfg.noise:
            inc = sample_brownian(2, cfg.T, cfg.dt, cfg.seed, cfg.n_paths).increments
            phi, mass, _, overflow = solver.run(rho0["T"], inc)
        else:
            phi, mass, _, overflow = solver.run(rho0["T"], None, n_steps)
        return MomentSeries(times, phi, mass, overflow)
    frame = build_frame(atlas, cfg.frame) if cfg.noise else None
    P = cfg.n_paths if cfg.noise else 1
    inc = (sample_brownian(frame.n_fields, cfg.T, cfg.dt, cfg.seed, P).increments if cfg.noise
           else np.zeros((1, n_steps, 0)))
    phis, masses, overflow = [], [], []
    for p in range(P):
        traj = pathwise_solve(rho0, velocity, frame, inc[p], cfg.dt, grid, path_id=p)
        phis.append(traj.l2())
        masses.append(traj.mass())
        overflow.extend((p, ev.t) for ev in traj.overflow)
    return MomentSeries(times, np.array(phis), np.array(masses), overflow)


def l2_moment(cfg: ExperimentConfig, t: float | None = None, series: MomentSeries | None = None):
    """``(Phi(t), stderr)`` for the Monte-Carlo estimate of ``E int rho(t)^2``; the final time by default."""
    series = series or run_moments(cfg)
    return series.at(cfg.T if t is None else t)
