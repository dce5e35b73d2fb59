"""Command-line driver: config handling, artifacts, determinism."""

import json

import numpy as np
import pytest

from exstokes import cli


def run(args):
    return cli.main(args)


def test_mesh_info_writes_report(tmp_path):
    out = tmp_path / "o"
    assert run(["mesh-info", "--levels", "0,1",
                "--output-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    rows = report["levels"]
    assert rows[0]["tets"] == 156 and rows[1]["tets"] == 1248
    assert abs(rows[0]["volume"] - 7.0) < 1e-12
    assert rows[1]["h"] == 0.75


def test_jn_with_velocity_datum_is_config_error(tmp_path, capsys):
    code = run(["solve", "--formulation", "jn", "--g-d", "stokeslet",
                "--levels", "0", "--output-dir", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "data.g_d" in err and "jn" in err


def test_missing_required_datum_is_config_error(tmp_path):
    code = run(["solve", "--formulation", "ch-dirichlet",
                "--levels", "0", "--output-dir", str(tmp_path / "o")])
    assert code == 2


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfgfile = tmp_path / "run.toml"
    cfgfile.write_text("[run]\nformulatoin = 'jn'\n")
    assert run(["mesh-info", "--config", str(cfgfile)]) == 2
    assert "run.formulatoin" in capsys.readouterr().err


def test_flags_override_config(tmp_path):
    cfgfile = tmp_path / "run.toml"
    cfgfile.write_text(
        "[run]\nformulation = 'ch-dirichlet'\nlevels = [0]\n"
        "[data]\ng_d = 'stokeslet'\n")
    out = tmp_path / "o"
    assert run(["solve", "--config", str(cfgfile),
                "--output-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["output_dir"] == str(out)
    assert report["kind"] == "CH_Dirichlet"
    assert report["passed"] is True
    assert report["solve"]["residual"] <= 1e-9
    assert (out / "solution.vtk").exists()
    assert (out / "system_manifest.json").exists()
    assert (out / "errors.csv").exists()


def test_solve_artifacts_are_deterministic(tmp_path):
    out = tmp_path / "o"
    args = ["solve", "--formulation", "ch-dirichlet", "--g-d", "stokeslet",
            "--levels", "0", "--output-dir", str(out)]
    assert run(args) == 0
    first = {name: (out / name).read_bytes()
             for name in ("report.json", "errors.csv",
                          "system_manifest.json", "solution.vtk")}
    assert run(args) == 0
    for name, blob in first.items():
        assert (out / name).read_bytes() == blob, name


def test_converge_cross_check_for_homogeneous_kind(tmp_path):
    out = tmp_path / "o"
    assert run(["converge", "--formulation", "ch-neumann-homog",
                "--f", "smooth", "--levels", "0",
                "--output-dir", str(out)]) == 0
    lines = (out / "errors.csv").read_text().splitlines()
    assert lines[0] == "level,sigma_discrepancy,u_discrepancy"
    assert len(lines) == 2


def test_eval_exterior_with_points_file(tmp_path):
    pts = tmp_path / "pts.csv"
    pts.write_text("x,y,z\n3.0,0.0,0.0\n0.0,-3.0,0.5\n")
    out = tmp_path / "o"
    assert run(["eval-exterior", "--formulation", "ch-dirichlet",
                "--g-d", "stokeslet", "--levels", "0",
                "--output-dir", str(out), "--points-file", str(pts)]) == 0
    lines = (out / "exterior_samples.csv").read_text().splitlines()
    assert lines[0] == "x,y,z,ux,uy,uz,p"
    assert len(lines) == 3
    report = json.loads((out / "report.json").read_text())
    assert report["velocity_relative_error"] < 1.0


def test_check_exit_code_reflects_results(tmp_path, monkeypatch):
    # exercise the exit-code plumbing without the full operator suite
    good = {"demo": dict(value=0.0, passed=True)}
    monkeypatch.setattr(cli.vf, "operator_checks", lambda *a, **k: good)
    assert run(["check", "--output-dir", str(tmp_path / "a")]) == 0
    bad = {"demo": dict(value=1.0, passed=False)}
    monkeypatch.setattr(cli.vf, "operator_checks", lambda *a, **k: bad)
    assert run(["check", "--output-dir", str(tmp_path / "b")]) == 1
    report = json.loads((tmp_path / "b" / "report.json").read_text())
    assert report["passed"] is False


def test_invalid_levels_rejected(tmp_path):
    assert run(["mesh-info", "--levels", "1,0",
                "--output-dir", str(tmp_path / "o")]) == 2
