import csv
import json
from pathlib import Path

import pytest

from rbsde import scenario as sc_mod
from rbsde.cli import main

SCEN = Path(sc_mod.__file__).parent / "scenarios"


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def load(path):
    with open(path) as fh:
        return json.load(fh)


def test_solve_double(tmp_path):
    assert main(["solve", "--scenario", str(SCEN / "upper_cap.json"), "--out", str(tmp_path)]) == 0
    rep = load(tmp_path / "report.json")
    assert rep["y0"] == pytest.approx(0.4)
    for name in ("Y.csv", "M.csv", "Rplus.csv", "Rminus.csv", "log.csv"):
        assert (tmp_path / name).exists()


def test_solve_lower_schemes(tmp_path):
    for scheme in ("direct", "picard", "monotone"):
        out = tmp_path / scheme
        code = main(["solve", "--scenario", str(SCEN / "lower_jump.json"), "--scheme", scheme,
                     "--out", str(out)])
        assert code == 0
        assert load(out / "report.json")["y0"] == pytest.approx(2.0, abs=1e-9)
        assert (out / "K.csv").exists()


def test_solve_fnm(tmp_path):
    code = main(["solve", "--scenario", str(SCEN / "upper_cap.json"), "--scheme", "fnm",
                 "--rho-scale", "1e6", "--out", str(tmp_path)])
    assert code == 0 and load(tmp_path / "report.json")["y0"] == pytest.approx(0.4, abs=1e-4)


def test_separation_exit_code(tmp_path):
    code = main(["solve", "--scenario", str(SCEN / "separation_violation.json"), "--out", str(tmp_path)])
    assert code == 2
    rec = load(tmp_path / "error.json")
    assert rec["error"] == "separation violation" and rec["node"] == 0


def test_missing_file_is_validation(tmp_path):
    assert main(["solve", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_nonconvergence_exit_code(tmp_path):
    doc = {"tree": {"type": "binomial", "N": 3, "h": 0.25}, "xi": "k + 1", "L": 0.5,
           "generator": {"family": "shifted-logistic", "params": {"a": 0, "b": 3, "c": 2, "s": 0}}}
    path = tmp_path / "slow.json"
    path.write_text(json.dumps(doc))
    code = main(["solve", "--scenario", str(path), "--scheme", "picard", "--max-iter", "2",
                 "--tol", "1e-300", "--out", str(tmp_path)])
    assert code == 3
    assert load(tmp_path / "error.json")["error"] == "non-convergence"


def test_dynkin_witness(tmp_path):
    code = main(["dynkin", "--scenario", str(SCEN / "witness_right_jump.json"), "--mode", "both",
                 "--out", str(tmp_path)])
    assert code == 0
    rep = load(tmp_path / "report.json")
    assert rep["plain_vs_system"]["plain"] == 0.0 and rep["plain_vs_system"]["system"] == 5.0


def test_dynkin_budget_exit(tmp_path):
    code = main(["dynkin", "--scenario", str(SCEN / "upper_cap.json"), "--mode", "exact",
                 "--max-pairs", "2", "--out", str(tmp_path)])
    assert code == 4


def test_verify_budget_skip(tmp_path):
    code = main(["verify", "--suites", "game-value", "--trials", "3", "--max-pairs", "1",
                 "--out", str(tmp_path)])
    assert code == 4
    rep = load(tmp_path / "report.json")
    assert rep["suites"][0]["status"] == "skipped" and rep["suites"][0]["skipped"] == 3


def test_verify_deterministic(tmp_path):
    args = ["verify", "--suites", "comparison,decomposition", "--trials", "5", "--seed", "11"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert read_csv(tmp_path / "a" / "suites.csv")[0]["status"] == "pass"


def test_verify_on_scenario(tmp_path):
    code = main(["verify", "--scenario", str(SCEN / "upper_cap.json"), "--suites", "game-value,representation",
                 "--trials", "2", "--out", str(tmp_path)])
    assert code == 0


def test_horizon_study(tmp_path):
    assert main(["horizon-study", "--scenario", str(SCEN / "horizon_affine.json"), "--a-max", "8",
                 "--out", str(tmp_path)]) == 0
    rep = load(tmp_path / "report.json")
    assert rep["asserting"] and rep["ok"]
    rows = read_csv(tmp_path / "horizon.csv")
    assert len(rows) == 8


def test_horizon_mixed_differences(tmp_path):
    assert main(["horizon-study", "--scenario", str(SCEN / "horizon_mixed.json"), "--out", str(tmp_path)]) == 0
    assert load(tmp_path / "report.json")["diffs_nonincreasing"]
