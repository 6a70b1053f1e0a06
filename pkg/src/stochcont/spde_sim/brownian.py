"""Reproducible Brownian increments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BrownianPaths:
    """Increments ``dW[p, k, i]`` of ``N`` independent Brownian motions on ``n_paths`` paths."""

    increments: np.ndarray  # (n_paths, n_steps, N)
    dt: float
    T: float
    seed: int

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def n_noise(self) -> int:
        return self.increments.shape[2]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def values(self) -> np.ndarray:
        """``W(t_k)`` with ``W(0) = 0``, shape ``(n_paths, n_steps + 1, N)``."""
        W = np.zeros((self.n_paths, self.n_steps + 1, self.n_noise))
        np.cumsum(self.increments, axis=1, out=W[:, 1:])
        return W

    def path(self, p: int) -> np.ndarray:
        return self.increments[p]

    def coarsen(self, factor: int) -> "BrownianPaths":
        """Same paths sampled at ``factor * dt``."""
        if self.n_steps % factor:
            raise ValueError(f"{self.n_steps} steps cannot be grouped by {factor}")
        inc = self.increments.reshape(self.n_paths, self.n_steps // factor, factor, self.n_noise)
        return BrownianPaths(inc.sum(axis=2), self.dt * factor, self.T, self.seed)

    def subset(self, paths) -> "BrownianPaths":
        return BrownianPaths(self.increments[paths], self.dt, self.T, self.seed)


def n_steps_for(T: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("time step must be positive")
    if T < dt:
        raise ValueError("horizon shorter than one time step")
    k = int(round(T / dt))
    if abs(k * dt - T) > 1e-9 * T:
        raise ValueError(f"horizon {T} is not a multiple of the step {dt}")
    return k


def sample_brownian(N: int, T: float, dt: float, seed: int, n_paths: int = 1) -> BrownianPaths:
    """Independent ``Normal(0, dt)`` increments.

    Path ``p`` and noise index ``i`` draw from their own substream
    ``SeedSequence(seed, spawn_key=(p, i))``, so a path does not depend on
    how many other paths or noise components are requested.
    """
    n_steps = n_steps_for(T, dt)
    inc = np.empty((n_paths, n_steps, N))
    sd = np.sqrt(dt)
    for p in range(n_paths):
        for i in range(N):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(p, i)))
            inc[p, :, i] = sd * rng.standard_normal(n_steps)
    return BrownianPaths(inc, float(dt), float(T), int(seed))
