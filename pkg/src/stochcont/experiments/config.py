"""Experiment configuration: a flat ``key = value`` text format.

Schema (all keys optional, defaults in :class:`ExperimentConfig`)::

    # comments start with '#'
    manifold  = torus2          # torus2 | torus1 | sphere2
    frame     = coordinate      # coordinate | partition | embedded
    noise     = on              # on | off
    velocity  = sink            # none | sink | sinflow | shear
    strength  = 6.0             # sink: c in |div u| ~ c r^-alpha
    alpha     = 0.3
    cap_cells = 2.0             # sink cap radius in grid spacings
    eps       = 0.5             # sinflow amplitude
    rho0      = one             # one | cos | bump
    T         = 0.5
    dt        = 0.001
    n         = 128             # grid points per axis
    n_paths   = 64
    seed      = 0
    tau       = 0.0             # heat smoothing of rho0 (0 = none)
    p         = 5.0
    mu        = 100.0           # truncation scale for duality checks
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


_BOOL = {"on": True, "true": True, "yes": True, "1": True, "off": False, "false": False, "no": False, "0": False}


@dataclass(frozen=True)
class ExperimentConfig:
    manifold: str = "torus2"
    frame: str = "coordinate"
    noise: bool = True
    velocity: str = "sink"
    strength: float = 6.0
    alpha: float = 0.3
    cap_cells: float = 2.0
    eps: float = 0.5
    shear_a: float = 1.0
    shear_b: float = 0.5
    rho0: str = "one"
    T: float = 0.5
    dt: float = 1e-3
    n: int = 128
    n_paths: int = 64
    seed: int = 0
    tau: float = 0.0
    p: float = 5.0
    mu: float = 100.0

    def __post_init__(self):
        dims = {"torus1": 1, "torus2": 2, "sphere2": 2}
        if self.manifold not in dims:
            raise ConfigError(f"unknown manifold {self.manifold!r}")
        d = dims[self.manifold]
        supported = {"none": set(dims), "sink": {"torus2"}, "shear": {"torus2"}, "sinflow": {"torus2"}}
        if self.velocity not in supported:
            raise ConfigError(f"unknown velocity family {self.velocity!r}")
        if self.manifold not in supported[self.velocity]:
            raise ConfigError(f"velocity {self.velocity!r} is not available on {self.manifold}")
        if self.velocity == "sink" and self.p <= d + 2:
            raise ConfigError(f"unbounded divergence needs p > d + 2 = {d + 2}, got p = {self.p}")
        if self.velocity == "sink" and self.alpha * self.p >= d:
            raise ConfigError("alpha * p must stay below d for div u to be p-integrable")
        if self.dt <= 0 or self.T <= 0 or self.n < 8 or self.n_paths < 1:
            raise ConfigError("need dt > 0, T > 0, n >= 8 and n_paths >= 1")
        if self.rho0 not in ("one", "cos", "bump"):
            raise ConfigError(f"unknown initial density {self.rho0!r}")

    @property
    def dim(self) -> int:
        return 1 if self.manifold == "torus1" else 2

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def canonical(self) -> str:
        """Sorted ``key = value`` text; the hash of this string identifies a run."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "on" if v else "off"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        return asdict(self)


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse the flat format; ``overrides`` win over file values."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = val
    values.update({k: v for k, v in overrides.items() if v is not None})
    out = {}
    for key, val in values.items():
        kind = types[key]
        try:
            if kind == "bool":
                out[key] = val if isinstance(val, bool) else _BOOL[str(val).lower()]
            elif kind == "int":
                out[key] = int(val)
            elif kind == "float":
                out[key] = float(val)
            else:
                out[key] = str(val)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r}") from exc
    return ExperimentConfig(**out)


def load_config(path: str | Path | None, **overrides) -> ExperimentConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, **overrides)
