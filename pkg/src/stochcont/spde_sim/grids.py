"""Grids carrying nodal densities, with cubic-spline interpolation.

The torus grid is a single periodic ``n^d`` lattice.  The sphere uses two
overlapping stereographic lattices (one per chart) on ``[-R, R]^2``; nodes
with ``|z| <= r_interior`` are updated by the solver and the remaining
fringe nodes are refilled from the other chart after every step.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ..geometry import FlatTorus, ManifoldAtlas, RoundSphere

TWO_PI = 2.0 * math.pi


class TorusGrid:
    def __init__(self, atlas: FlatTorus, n: int):
        self.atlas = atlas
        self.n = int(n)
        self.dim = atlas.dim
        self.h = TWO_PI / self.n
        self.shape = (self.n,) * self.dim
        ax = np.arange(self.n) * self.h
        mesh = np.meshgrid(*([ax] * self.dim), indexing="ij")
        self.nodes = {"T": np.stack(mesh, axis=-1).reshape(-1, self.dim)}
        self.active = {"T": np.arange(self.nodes["T"].shape[0])}
        self.weights = {"T": np.full(self.nodes["T"].shape[0], self.h**self.dim)}

    @property
    def charts(self) -> list[str]:
        return ["T"]

    @property
    def size(self) -> int:
        return self.n**self.dim

    def zeros(self) -> dict[str, np.ndarray]:
        return {"T": np.zeros(self.shape)}

    def sample(self, f) -> dict[str, np.ndarray]:
        return {"T": np.asarray(f("T", self.nodes["T"]), dtype=float).reshape(self.shape)}

    def coefficients(self, values: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {"T": ndimage.spline_filter(values["T"], order=3, mode="grid-wrap")}

    def interpolate(self, coeffs: dict[str, np.ndarray], chart: str, x: np.ndarray) -> np.ndarray:
        idx = (np.asarray(x) / self.h).T
        return ndimage.map_coordinates(coeffs["T"], idx, order=3, mode="grid-wrap", prefilter=False)

    def locate_feet(self, chart: str, y: np.ndarray):
        """Chart in which each foot point is interpolated: ``[(chart, mask, coords)]``."""
        return [("T", np.ones(y.shape[0], dtype=bool), y)]

    def fill_fringe(self, values):
        return values

    def integrate(self, values: dict[str, np.ndarray], weights: dict[str, np.ndarray] | None = None) -> float:
        w = self.weights["T"] if weights is None else weights["T"]
        return float(np.sum(np.ravel(values["T"]) * w))


class SphereGrid:
    """Overset stereographic grids on the unit sphere."""

    def __init__(self, atlas: RoundSphere, n: int, box_radius: float = 2.0, r_interior: float = 1.5):
        if r_interior <= atlas.support_radius:
            raise ValueError("interior radius must contain the partition support")
        if r_interior * box_radius <= 1.0:
            raise ValueError("fringe nodes would not be covered by the other chart")
        self.atlas = atlas
        self.n = int(n)
        self.dim = 2
        self.R = box_radius
        self.r_interior = r_interior
        self.ax = np.linspace(-box_radius, box_radius, self.n)
        self.h = self.ax[1] - self.ax[0]
        if r_interior + 3 * self.h > box_radius:
            raise ValueError("grid too coarse: interpolation stencils would leave the box")
        self.shape = (self.n, self.n)
        X, Y = np.meshgrid(self.ax, self.ax, indexing="ij")
        nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)
        radius = np.linalg.norm(nodes, axis=-1)
        interior = radius <= r_interior
        self.nodes = {c: nodes for c in atlas.chart_names}
        self.active = {c: np.nonzero(interior)[0] for c in atlas.chart_names}
        self.fringe = {c: np.nonzero(~interior)[0] for c in atlas.chart_names}
        trap = np.ones(self.n)
        trap[0] = trap[-1] = 0.5
        cell = np.outer(trap, trap).ravel() * self.h**2
        sqrt_det = RoundSphere.conformal_factor_np(nodes)
        self.weights = {
            c: cell * sqrt_det * atlas.partition(c, c, nodes) ** 2 for c in atlas.chart_names
        }
        # donor coordinates of fringe nodes in the other chart
        self.donor = {}
        names = atlas.chart_names
        for k, c in enumerate(names):
            other = names[1 - k]
            self.donor[c] = (other, atlas.transition(c, other, nodes[self.fringe[c]]))

    @property
    def charts(self) -> list[str]:
        return self.atlas.chart_names

    @property
    def size(self) -> int:
        return sum(len(a) for a in self.active.values())

    def zeros(self):
        return {c: np.zeros(self.shape) for c in self.charts}

    def sample(self, f):
        return {c: np.asarray(f(c, self.nodes[c]), dtype=float).reshape(self.shape) for c in self.charts}

    def coefficients(self, values):
        return {c: ndimage.spline_filter(v, order=3, mode="nearest") for c, v in values.items()}

    def _index(self, x):
        return ((np.asarray(x) + self.R) / self.h).T

    def interpolate(self, coeffs, chart, x):
        return ndimage.map_coordinates(coeffs[chart], self._index(x), order=3, mode="nearest", prefilter=False)

    def locate_feet(self, chart: str, y: np.ndarray):
        names = self.charts
        other = names[1 - names.index(chart)]
        inside = np.linalg.norm(y, axis=-1) <= self.r_interior
        out = [(chart, inside, y[inside])]
        if not np.all(inside):
            out.append((other, ~inside, self.atlas.transition(chart, other, y[~inside])))
        return out

    def fill_fringe(self, values):
        coeffs = self.coefficients(values)
        out = {}
        for c in self.charts:
            other, coords = self.donor[c]
            v = values[c].copy().ravel()
            v[self.fringe[c]] = self.interpolate(coeffs, other, coords)
            out[c] = v.reshape(self.shape)
        return out

    def integrate(self, values, weights=None) -> float:
        weights = self.weights if weights is None else weights
        return float(sum(np.sum(np.ravel(values[c]) * weights[c]) for c in self.charts))


def build_grid(atlas: ManifoldAtlas, n: int):
    if isinstance(atlas, FlatTorus):
        return TorusGrid(atlas, n)
    if isinstance(atlas, RoundSphere):
        return SphereGrid(atlas, n)
    raise ValueError(f"no grid for {atlas.name}")
