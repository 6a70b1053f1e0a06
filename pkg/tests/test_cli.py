from __future__ import annotations

import json
import subprocess
import sys

import pytest

from stochcont.cli import build_parser, main


def test_every_subcommand_is_registered():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == {"frame-check", "smooth-check", "simulate", "l2-experiment", "dual-solve",
                                "truncation-suite"}


def test_frame_check_prints_a_table(capsys):
    assert main(["frame-check", "--manifold", "torus2", "--frame", "coordinate", "--samples", "50"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# frame_check\n") and "section_identity" in out


def test_truncation_suite_passes(capsys):
    assert main(["truncation-suite", "--mu", "1,10", "--grid", "2000"]) == 0
    assert capsys.readouterr().out.rstrip().endswith("0 failures")


def test_dual_solve_constant_profile(capsys):
    assert main(["dual-solve", "--b-profile", "const", "--c", "2", "--n", "16", "--t0", "0.05",
                 "--dt", "0.01", "--scale", "1,2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "# dual_solve" and len(lines) == 4


def test_simulate_writes_tables_and_manifest(tmp_path):
    out = tmp_path / "run"
    args = ["simulate", "--set", "velocity=shear", "--set", "n=16", "--set", "T=0.01", "--set", "n_paths=2",
            "--every", "5", "--out", str(out)]
    assert main(args) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["n"] == 16 and manifest["seed"] == 0
    assert sorted(manifest["tables"]) == ["series", "summary"]
    # 11 levels written every 5th: t = 0, 0.005, 0.01
    assert len((out / "series.csv").read_text().splitlines()) == 4


def test_config_file_and_errors(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("velocity = none\nnoise = off\nn = 16\nT = 0.005\n")
    assert main(["simulate", "--config", str(cfg)]) == 0
    capsys.readouterr()
    assert main(["simulate", "--config", str(cfg), "--set", "manifold=klein"]) == 2
    assert "unknown manifold" in capsys.readouterr().err
    assert main(["simulate", "--set", "novalue"]) == 2


def test_argparse_rejects_unknown_choices():
    with pytest.raises(SystemExit):
        main(["frame-check", "--manifold", "klein"])


def test_console_entry_point_runs_as_a_module():
    res = subprocess.run([sys.executable, "-m", "stochcont.cli", "--help"], capture_output=True, text=True,
                         timeout=120)
    assert res.returncode == 0 and "dual-solve" in res.stdout
