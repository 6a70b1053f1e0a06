"""Semi-Lagrangian pathwise solver.

Each step traces every active grid node one step back along the
characteristics (Heun, so additive noise is traced exactly), interpolates
the previous density at the foot with cubic splines and multiplies by the
trapezoidal exponent factor

    exp(-1/2 (div u(x) + div u(y)) dt - sum_i 1/2 (div a_i(x) + div a_i(y)) dW^i).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..geometry import ManifoldAtlas
from ..noise_frames import NoiseFrame
from .characteristics import OVERFLOW_EXPONENT, OverflowEvent, Velocity, as_velocity, strat_step

logger = logging.getLogger(__name__)


@dataclass
class DensityState:
    values: dict[str, np.ndarray]  # chart -> grid array
    t: float
    path_id: int = 0


@dataclass
class Trajectory:
    grid: object
    times: np.ndarray
    states: list[DensityState]
    increments: np.ndarray  # (n_steps, N)
    dt: float
    path_id: int = 0
    overflow: list[OverflowEvent] = field(default_factory=list)

    def mass(self) -> np.ndarray:
        return np.array([self.grid.integrate(s.values) for s in self.states])

    def l2(self) -> np.ndarray:
        return np.array([self.grid.integrate({c: v**2 for c, v in s.values.items()}) for s in self.states])


def _initial_values(grid, rho0) -> dict[str, np.ndarray]:
    if isinstance(rho0, dict):
        return {c: np.asarray(v, dtype=float).reshape(grid.shape).copy() for c, v in rho0.items()}
    if callable(rho0):
        return grid.sample(rho0)
    c = float(rho0)
    return {ch: np.full(grid.shape, c) for ch in grid.charts}


def semi_lagrangian_step(grid, values, velocity: Velocity, frame: NoiseFrame | None, dW, dt: float,
                         t: float) -> tuple[dict[str, np.ndarray], float]:
    """Advance nodal values from ``t`` to ``t + dt``; returns (values, max |log factor|)."""
    atlas = grid.atlas
    coeffs = grid.coefficients(values)
    new = {}
    worst = 0.0
    noisy = frame is not None and dW is not None and np.any(dW != 0.0)
    for chart in grid.charts:
        active = grid.active[chart]
        x = grid.nodes[chart][active]
        # foot of the characteristic through (t + dt, x)
        y = strat_step(atlas, chart, x, velocity, frame if noisy else None, dW, dt, t + dt, direction=-1)
        interp = np.empty(x.shape[0])
        for src, mask, ys in grid.locate_feet(chart, y):
            interp[mask] = grid.interpolate(coeffs, src, ys)
        log_factor = -0.5 * (velocity.divergence(chart, x, t + dt) + velocity.divergence(chart, y, t)) * dt
        if noisy and frame.constant_components is None:
            log_factor -= 0.5 * (frame.divergences(chart, x) + frame.divergences(chart, y)) @ dW
        worst = max(worst, float(np.max(np.abs(log_factor))) if log_factor.size else 0.0)
        out = values[chart].copy().ravel()
        with np.errstate(over="ignore", invalid="ignore"):
            out[active] = interp * np.exp(log_factor)
        new[chart] = out.reshape(grid.shape)
    return grid.fill_fringe(new), worst


def pathwise_solve(rho0, u, frame: NoiseFrame | None, increments, dt: float, grid,
                   t0: float = 0.0, path_id: int = 0, store: bool = True,
                   callback: Callable[[DensityState], None] | None = None) -> Trajectory:
    """Solve along one Brownian path.

    ``increments`` has shape ``(n_steps, N)``; pass ``np.zeros((n_steps, 0))``
    for a deterministic run.  With ``store=False`` only the final state is
    kept (use ``callback`` to reduce on the fly).
    """
    atlas: ManifoldAtlas = grid.atlas
    velocity = as_velocity(u, atlas)
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 2:
        raise ValueError("increments must have shape (n_steps, N)")
    if frame is not None and increments.shape[1] not in (0, frame.n_fields):
        raise ValueError(f"{increments.shape[1]} Brownian motions for {frame.n_fields} noise fields")
    values = _initial_values(grid, rho0)
    state = DensityState(values, t0, path_id)
    states = [state]
    if callback is not None:
        callback(state)
    overflow: list[OverflowEvent] = []
    log_sup = np.log(max(max(float(np.max(np.abs(v))) for v in values.values()), 1e-300))
    for k in range(increments.shape[0]):
        t = t0 + k * dt
        dW = increments[k] if increments.shape[1] else None
        values, _ = semi_lagrangian_step(grid, values, velocity, frame, dW, dt, t)
        state = DensityState(values, t + dt, path_id)
        peak = max(float(np.max(np.abs(v))) for v in values.values())
        if not np.isfinite(peak) or np.log(max(peak, 1e-300)) - log_sup > OVERFLOW_EXPONENT:
            overflow.append(OverflowEvent(t + dt, int(np.argmax([np.max(np.abs(v)) for v in values.values()])),
                                          float(np.log(peak)) if np.isfinite(peak) else float("inf")))
            logger.warning("density overflow at t=%.4g on path %d", t + dt, path_id)
        if store:
            states.append(state)
        if callback is not None:
            callback(state)
    if not store:
        states = [states[0], state]
    times = np.array([s.t for s in states])
    return Trajectory(grid, times, states, increments, dt, path_id, overflow)
