import json
from pathlib import Path

import numpy as np
import pytest

from rbsde import scenario as sc_mod
from rbsde.errors import SeparationError, ValidationError
from rbsde.scenario import Scenario, problem_doc

SCEN = Path(sc_mod.__file__).parent / "scenarios"

BASE = {
    "tree": {"type": "binomial", "N": 2, "h": 0.5, "p": 0.4},
    "xi": "2*k + 1",
    "generator": {"family": "affine", "params": {"a": 0.1, "b": 1}},
}


def test_shipped_scenarios_roundtrip():
    files = sorted(SCEN.glob("*.json"))
    assert len(files) >= 6
    for path in files:
        if path.stem == "separation_violation":
            continue
        sc = Scenario.load(path)
        again = Scenario.parse(sc.emit())
        assert again == sc
        assert again.emit() == sc.emit()


def test_barrier_inferred():
    assert Scenario(BASE).barrier == "none"
    assert Scenario(dict(BASE, L=0)).barrier == "lower"
    assert Scenario(dict(BASE, U=100)).barrier == "upper"
    assert Scenario(dict(BASE, L=0, U=100)).barrier == "double"


def test_value_forms():
    doc = dict(BASE, L={"instant": {"table": {"0": 2.5}, "default": -1}, "plus": [0] * 7},
               xi=[1, 2, 3, 4])
    prob = Scenario(doc).build()
    assert prob.L.inst[0] == 2.5 and prob.L.inst[3] == -1 and prob.L.plus[0] == 0
    assert prob.xi[prob.tree.at_T].tolist() == [1, 2, 3, 4]


def test_explicit_tree_and_terminal():
    doc = dict(BASE, tree={"type": "explicit", "h": 1.0, "nodes": [
        {"id": 0, "parent": None}, {"id": 1, "parent": 0, "prob": 0.5}, {"id": 2, "parent": 0, "prob": 0.5},
        {"id": 3, "parent": 1, "prob": 1.0}, {"id": 4, "parent": 2, "prob": 1.0}]},
        terminal="id == 2", xi="id")
    prob = Scenario(doc).build()
    assert prob.tree.at_T.tolist() == [False, False, True, True, False]
    assert prob.tree.after_T[4]
    assert prob.xi[2] == 2 and prob.xi[3] == 3


def test_validation_errors():
    with pytest.raises(ValidationError):
        Scenario.parse("{not json")
    with pytest.raises(ValidationError):
        Scenario(dict(BASE, extra=1))
    with pytest.raises(ValidationError):
        Scenario(dict(BASE, solver={"speed": "fast"}))
    with pytest.raises(ValidationError):
        Scenario(dict(BASE, xi="k +"))
    with pytest.raises(ValidationError):
        Scenario(dict(BASE, L=[0, 1]))
    with pytest.raises(ValidationError):
        Scenario(dict(BASE, generator={"family": "affine", "params": {"a": 0, "b": -1}}))
    with pytest.raises(ValidationError):
        Scenario(dict(BASE, verify={"suites": ["nope"]}))
    with pytest.raises(ValidationError):
        Scenario({"tree": BASE["tree"]})


def test_separation_prechecked():
    with pytest.raises(SeparationError):
        Scenario.load(SCEN / "separation_violation.json")
    with pytest.raises(SeparationError):
        Scenario(dict(BASE, L=10))


def test_problem_doc_roundtrip():
    prob = Scenario(dict(BASE, L="0.5*k", U=100)).build()
    again = Scenario(problem_doc(prob)).build()
    assert np.array_equal(again.xi, prob.xi)
    assert np.array_equal(again.L.plus, prob.L.plus)
    assert again.f.spec() == prob.f.spec()


def test_with_horizon():
    sc = Scenario(BASE).with_horizon(4)
    assert sc.make_tree().N == 4
    assert json.loads(sc.emit())["tree"]["N"] == 4
