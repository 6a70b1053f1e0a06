"""Command line interface: ``stochcont <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from .experiments.config import ConfigError, ExperimentConfig, load_config


def _overrides(pairs: list[str] | None) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _emit(tables: dict, cfg: ExperimentConfig | None, out: str | None, start: float, extra=None) -> None:
    from .experiments.report import table_to_csv, write_outputs

    if out:
        for path in write_outputs(out, tables, cfg, time.perf_counter() - start, extra):
            print(f"wrote {path}")
    else:
        for name, rows in tables.items():
            print(f"# {name}")
            sys.stdout.write(table_to_csv(rows))


def cmd_frame_check(args) -> int:
    from .experiments.checks import frame_checks

    start = time.perf_counter()
    row = frame_checks(args.manifold, args.frame, args.samples, args.seed)
    _emit({"frame_check": [row]}, None, args.out, start)
    ok = row["section_identity"] <= 1e-10 and row["ellipticity"] <= 1e-6
    return 0 if ok else 1


def cmd_smooth_check(args) -> int:
    from .experiments.checks import smoothing_checks

    start = time.perf_counter()
    res = smoothing_checks(args.n, args.tau)
    errs = res.pop("smoothing_errors")
    rows = [res]
    err_rows = [{"tau": 2.0 ** (-(k + 1)), "l2_error": e} for k, e in enumerate(errs)]
    _emit({"smooth_check": rows, "smoothing_error": err_rows}, None, args.out, start)
    return 0


def cmd_simulate(args) -> int:
    from .experiments.moments import run_moments
    from .experiments.report import RunReport

    start = time.perf_counter()
    cfg = load_config(args.config, **_overrides(args.set))
    series = run_moments(cfg)
    rep = RunReport.from_series(cfg, series, time.perf_counter() - start)
    _emit({"series": rep.series_rows(args.every), "summary": [rep.summary_row()]}, cfg, args.out, start)
    return 0


def cmd_l2_experiment(args) -> int:
    from .experiments.concentration import concentration_experiment

    start = time.perf_counter()
    cfg = load_config(args.config, **_overrides(args.set))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    rep = concentration_experiment(cfg, seeds=seeds)
    checks = rep.checks()
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    _emit(rep.tables(), cfg, args.out, start, {"checks": checks})
    return 0


def cmd_truncation_suite(args) -> int:
    from .experiments.truncation import truncation_property_suite

    start = time.perf_counter()
    mus = tuple(float(m) for m in args.mu.split(","))
    table = truncation_property_suite(mus, args.grid)
    _emit({"truncation_suite": table.as_dicts()}, None, args.out, start)
    print(f"{len(table.failures)} failures")
    return 0 if not table.failures else 1


def b_profile(name: str, grid, c: float, cfg: ExperimentConfig):
    """Nodal reaction coefficient for ``dual-solve``."""
    from .experiments.truncation import profile_constants
    from .experiments.velocity import capped_sink_for_grid

    if name == "zero":
        return 0.0
    if name == "const":
        return -abs(c)
    if name == "sink":
        if grid.dim != 2 or grid.charts != ["T"]:
            raise ConfigError("the sink profile lives on the flat 2-torus")
        u = capped_sink_for_grid(grid.n, cfg.strength, cfg.alpha, cfg.cap_cells)
        scale = profile_constants()["C_chi"] if c == 0 else abs(c)
        vals = -scale * np.abs(u.divergence("T", grid.nodes["T"]))
        return lambda chart, x, t: vals
    raise ConfigError(f"unknown b profile {name!r}")


def cmd_dual_solve(args) -> int:
    from .dual_parabolic import DualProblem, bound_report, solve_terminal
    from .geometry import build_atlas
    from .spde_sim import build_grid

    start = time.perf_counter()
    cfg = ExperimentConfig(manifold=args.manifold, velocity="none", p=args.p)
    grid = build_grid(build_atlas(args.manifold), args.n)
    rows = []
    for lam in [float(v) for v in args.scale.split(",")]:
        base = b_profile(args.b_profile, grid, args.c, cfg)
        if callable(base):
            b = (lambda f, k: (lambda chart, x, t: k * f(chart, x, t)))(base, lam)
        else:
            b = lam * base
        problem = DualProblem(grid, args.t0, args.dt, b=b, p=args.p)
        phi = solve_terminal(problem)
        rep = bound_report(phi, problem)
        row = {"profile": args.b_profile, "scale": lam}
        row.update({k: rep.row()[k] for k in ("t0", "p", "b_norm", "sup_phi", "sup_grad_phi", "min_phi", "ratio")})
        rows.append(row)
    _emit({"dual_solve": rows}, None, args.out, start)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochcont", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("frame-check", help="noise frame identities")
    p.add_argument("--manifold", default="sphere2", choices=["torus1", "torus2", "sphere2"])
    p.add_argument("--frame", default="partition", choices=["partition", "embedded", "coordinate"])
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_frame_check)

    p = sub.add_parser("smooth-check", help="heat smoothing properties on T^2")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_smooth_check)

    for name, func, hlp in (("simulate", cmd_simulate, "Monte-Carlo L2 moment for one configuration"),
                            ("l2-experiment", cmd_l2_experiment, "noise-off/on concentration design")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", help="flat key = value file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", help="output directory for CSV tables and the manifest")
        if name == "simulate":
            p.add_argument("--every", type=int, default=1, help="write every k-th time level")
        else:
            p.add_argument("--seeds", default="0,1,2")
        p.set_defaults(func=func)

    p = sub.add_parser("dual-solve", help="terminal problem with phi(t0) = 1")
    p.add_argument("--b-profile", default="sink", choices=["zero", "const", "sink"])
    p.add_argument("--c", type=float, default=0.0, help="constant for 'const'; scale for 'sink' (0 = C_chi)")
    p.add_argument("--scale", default="1", help="comma-separated multipliers of b")
    p.add_argument("--manifold", default="torus2", choices=["torus1", "torus2", "sphere2"])
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--t0", type=float, default=0.1)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--p", type=float, default=5.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dual_solve)

    p = sub.add_parser("truncation-suite", help="inequalities for the truncations F_mu")
    p.add_argument("--mu", default="1,10,100")
    p.add_argument("--grid", type=int, default=100_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_truncation_suite)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return int(args.func(args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
