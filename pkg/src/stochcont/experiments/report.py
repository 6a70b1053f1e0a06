"""Run reports, CSV tables and manifests."""

from __future__ import annotations

import csv
import io
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .config import ExperimentConfig
from .moments import GronwallFit, MomentSeries, gronwall_fit


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def table_to_csv(rows: list[dict]) -> str:
    """Deterministic CSV text: column order from the first row, floats by ``repr``."""
    if not rows:
        return ""
    buf = io.StringIO()
    cols = list(rows[0])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


@dataclass
class RunReport:
    """Monte-Carlo moment series with its Gronwall fit and provenance."""

    config: ExperimentConfig
    series: MomentSeries
    fit: GronwallFit | None = None
    tables: dict[str, list[dict]] = field(default_factory=dict)
    wall_time: float = 0.0

    @classmethod
    def from_series(cls, cfg: ExperimentConfig, series: MomentSeries, wall_time: float = 0.0) -> "RunReport":
        try:
            fit = gronwall_fit(series.times, series.mean)
        except ValueError:
            fit = None
        return cls(cfg, series, fit, {}, wall_time)

    @property
    def overflow(self) -> list:
        return self.series.overflow

    def series_rows(self, every: int = 1) -> list[dict]:
        mean, se = self.series.mean, self.series.stderr
        return [
            {"t": float(self.series.times[k]), "phi": float(mean[k]), "stderr": float(se[k]),
             "mass": float(np.mean(self.series.mass_paths[:, k]))}
            for k in range(0, len(self.series.times), every)
        ]

    def summary_row(self) -> dict:
        f = self.fit
        return {
            "config": self.config.digest(), "seed": self.config.seed, "n": self.config.n,
            "noise": self.config.noise, "n_paths": self.series.n_paths,
            "sup_phi": float(np.max(self.series.mean)),
            "phi0_hat": f.phi0 if f else float("nan"), "K_hat": f.K if f else float("nan"),
            "K_envelope": f.K_envelope if f else float("nan"),
            "overflow_events": len(self.series.overflow),
        }


def write_outputs(out_dir: str | Path, tables: dict[str, list[dict]], cfg: ExperimentConfig | None,
                  wall_time: float, extra: dict | None = None) -> list[Path]:
    """Write ``<name>.csv`` per table plus ``manifest.json`` (config echo, seed, versions, wall time)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in tables.items():
        path = out / f"{name}.csv"
        path.write_text(table_to_csv(rows))
        written.append(path)
    from .. import __version__

    manifest = {
        "config": cfg.as_dict() if cfg else None,
        "config_digest": cfg.digest() if cfg else None,
        "seed": cfg.seed if cfg else None,
        "versions": {"stochcont": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time_s": round(wall_time, 3),
        "tables": sorted(tables),
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_fmt))
    written.append(path)
    return written
