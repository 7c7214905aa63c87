from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from fbhjb.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(tmp_path, command, doc=None, config=None, extra=(), name="out"):
    out = tmp_path / name
    if config is None:
        config = tmp_path / f"{name}.json"
        config.write_text(json.dumps(doc))
    code = main([command, "--config", str(config), "--out", str(out), *extra])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, out, report


SMALL_HJB = {"problem": {"registry": "heat"},
             "hjb": {"grid": {"dt": 0.005, "dx": 0.1, "lower": [-3.0], "upper": [3.0]}}}
SMALL_DPP = {"problem": {"registry": "drift_control", "T": 0.5},
             "grid": {"N": 5, "counts": [41], "lower": [-4.0], "upper": [4.0]},
             "ensemble": {"M": 1000, "seed": 2}}


def test_check_heat(tmp_path):
    code, _, rep = run(tmp_path, "check", config=CONFIGS / "heat_check.json")
    assert code == 0 and rep["schema"] == 1 and rep["status"] == "ok"
    assert rep["result"]["assumptions"]["smallness_ok"] is True


def test_check_gate_failure(tmp_path):
    code, _, rep = run(tmp_path, "check", config=CONFIGS / "burgers_strong_check.json")
    assert code == 2
    assert rep["result"]["assumptions"]["smallness_ok"] is False


def test_cfl_violation_exit_and_message(tmp_path, capsys):
    code, _, rep = run(tmp_path, "solve-hjb", config=CONFIGS / "heat_hjb_cfl.json")
    err = capsys.readouterr().err
    assert code == 3
    assert "CflViolation" in err and "[hjb]" in err and "0.0025" in err
    assert rep["status"] == "error" and rep["result"]["bound"] == pytest.approx(0.0025)


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["check", "--config", str(bad), "--out", str(tmp_path / "a")]) == 4
    assert run(tmp_path, "check", {"nothing": 1}, name="b")[0] == 4
    doc = {**SMALL_HJB, "verify": {"check": "nope"}}
    assert run(tmp_path, "verify", doc, name="c")[0] == 4
    assert "ConfigError" in capsys.readouterr().err


def test_gate_refusal_in_solver(tmp_path):
    doc = {"problem": {"registry": "burgers", "b": ["3*y"], "L2": 3.0, "override_gate": False},
           "fbsde": {"x0": [[0.0]], "steps": 10}, "ensemble": {"M": 500}}
    assert run(tmp_path, "solve-fbsde", doc)[0] == 2


def test_solve_hjb_artifacts_reproducible(tmp_path):
    code, out, rep = run(tmp_path, "solve-hjb", SMALL_HJB, name="a")
    assert code == 0
    for f in ("value_field.csv", "value_field.json", "residual.csv"):
        assert (out / f).exists()
    code, again, _ = run(tmp_path, "solve-hjb", SMALL_HJB, name="b", extra=("--threads", "4"))
    assert code == 0
    assert (out / "value_field.csv").read_bytes() == (again / "value_field.csv").read_bytes()


def test_value_dpp_seed_override(tmp_path):
    _, a, rep = run(tmp_path, "value-dpp", SMALL_DPP, name="a")
    _, b, _ = run(tmp_path, "value-dpp", SMALL_DPP, name="b", extra=("--threads", "3"))
    _, c, rep_c = run(tmp_path, "value-dpp", SMALL_DPP, name="c", extra=("--seed-override", "9"))
    assert rep["seed"] == 2 and rep_c["seed"] == 9
    assert (a / "value_field.csv").read_bytes() == (b / "value_field.csv").read_bytes()
    assert (a / "value_field.csv").read_bytes() != (c / "value_field.csv").read_bytes()


def test_solve_fbsde_paths(tmp_path):
    doc = {"problem": {"registry": "weak_burgers"}, "ensemble": {"M": 1000, "seed": 1},
           "fbsde": {"x0": [[0.0], [0.5]], "steps": 10, "export_paths": 5}}
    code, out, rep = run(tmp_path, "solve-fbsde", doc)
    assert code == 0 and len(rep["result"]["Y0"]) == 2
    lines = (out / "paths_1.csv").read_text().splitlines()
    assert lines[0] == "t,path_id,x1,y,z1" and len(lines) == 1 + 11 * 5


def test_verify_ito_from_hjb(tmp_path):
    # wide box keeps paths away from the clamped spatial edge; time clamping of the
    # mollifier lifts Pi1 towards +1/2 near t = 0 and t = T but never below zero
    doc = {"problem": {"registry": "heat"}, "ensemble": {"M": 500},
           "hjb": {"grid": {"dt": 0.005, "dx": 0.1, "lower": [-6.0], "upper": [6.0]}},
           "verify": {"check": "ito", "x": [0.2], "steps": 10}}
    code, out, rep = run(tmp_path, "verify", doc)
    assert code == 0 and (out / "candidate.csv").exists()
    assert rep["result"]["Pi1_min"] >= -0.05 and rep["result"]["Pi1_max"] <= 0.55


def test_bench_table(tmp_path, capsys):
    code, _, rep = run(tmp_path, "bench", {"bench": {"scale": "quick", "criteria": [3]}})
    printed = capsys.readouterr().out
    assert code == 0 and "[PASS] criterion  3" in printed and "1/1 criteria passed" in printed
    assert rep["result"]["criteria"][0]["passed"] is True


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fbhjb.cli", "check", "--config",
                          str(CONFIGS / "heat_check.json"), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
