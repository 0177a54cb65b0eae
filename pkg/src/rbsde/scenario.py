"""Scenario files: JSON documents describing tree, data and solver options.

A scenario looks like::

    {
      "name": "lower-example",
      "tree": {"type": "binomial", "N": 1, "h": 1.0, "p": 0.5},
      "terminal": "0",
      "xi": "2*k + 1",
      "generator": {"family": "affine", "params": {"a": 0, "b": 1}},
      "V": {"interval": 0, "jump": 0},
      "L": {"instant": "2*(t == 0)", "plus": "2*(t == 0)"},
      "solver": {"barrier": "lower", "scheme": "direct"},
      "verify": {"suites": ["representation"], "trials": 20, "seed": 0}
    }

Values (``xi``, barriers, ``V`` parts) are a number, an expression over
node labels (t, time, k, j, id, N, h), a list with one entry per node
(``xi`` also accepts one entry per terminal node), or
``{"table": {"<node id>": value, ...}, "default": value}``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from . import generators as gen
from .double import check_separation
from .errors import SeparationError, ValidationError
from .expr import eval_expr
from .fexp import terminal_array
from .filtration import DEFAULT_MAX_PAIRS, DEFAULT_MAX_RULES, binomial_tree, explicit_tree
from .processes import FVProcess, LatticeProcess

TOP_KEYS = {"name", "tree", "terminal", "xi", "generator", "V", "L", "U", "solver", "verify", "horizon"}
SOLVER_KEYS = {"barrier", "scheme", "tol", "max_iter", "ladder", "rho_scale", "inner", "shift"}
VERIFY_KEYS = {"suites", "trials", "seed", "budgets"}
BARRIERS = ("none", "lower", "upper", "double")
SUITES = ("comparison", "representation", "minimality", "game-value", "stability",
          "monotone-stability", "decomposition", "fexp-properties")


@dataclass
class Problem:
    """Numeric data built from a scenario."""

    tree: object
    xi: np.ndarray
    f: object
    V: FVProcess | None
    L: LatticeProcess | None
    U: LatticeProcess | None
    barrier: str
    solver: dict = field(default_factory=dict)


def _values(spec, tree, what, terminal=False):
    env = tree.labels()
    if isinstance(spec, bool):
        raise ValidationError(f"{what}: booleans are not values")
    if isinstance(spec, (int, float)):
        return np.full(tree.n, float(spec))
    if isinstance(spec, str):
        try:
            return eval_expr(spec, env, tree.n)
        except ValidationError as exc:
            raise ValidationError(f"{what}: {exc}") from None
    if isinstance(spec, list):
        arr = np.asarray(spec, dtype=float)
        if arr.shape == (tree.n,):
            return arr
        if terminal and arr.shape == (int(tree.at_T.sum()),):
            return terminal_array(tree, arr)
        raise ValidationError(f"{what}: list has {len(spec)} entries, expected {tree.n}")
    if isinstance(spec, dict) and "table" in spec:
        out = _values(spec.get("default", 0.0), tree, what, terminal)
        for key, val in spec["table"].items():
            v = int(key)
            if not 0 <= v < tree.n:
                raise ValidationError(f"{what}: node {v} does not exist")
            out[v] = float(val)
        return out
    raise ValidationError(f"{what}: cannot read value specification {spec!r}")


def _barrier(spec, tree, what):
    if spec is None:
        return None
    if isinstance(spec, dict) and ("instant" in spec or "plus" in spec):
        extra = set(spec) - {"instant", "plus"}
        if extra:
            raise ValidationError(f"{what}: unknown keys {sorted(extra)}")
        inst = _values(spec.get("instant", 0.0), tree, what + ".instant")
        plus = _values(spec["plus"], tree, what + ".plus") if "plus" in spec else inst.copy()
    else:
        inst = _values(spec, tree, what)
        plus = inst.copy()
    return LatticeProcess(tree, inst, plus)


def _normalize(d):
    if not isinstance(d, dict):
        raise ValidationError("scenario must be a JSON object")
    extra = set(d) - TOP_KEYS
    if extra:
        raise ValidationError(f"unknown scenario sections {sorted(extra)}")
    for key in ("tree", "xi", "generator"):
        if key not in d:
            raise ValidationError(f"scenario lacks the {key!r} section")
    out = copy.deepcopy(d)
    t = out["tree"]
    kind = t.get("type", "binomial")
    if kind == "binomial":
        t = {"type": "binomial", "N": int(t.get("N", 1)), "h": float(t.get("h", 1.0)),
             "p": float(t.get("p", 0.5))}
    elif kind == "explicit":
        if "nodes" not in t:
            raise ValidationError("explicit tree needs a node list")
        t = {"type": "explicit", "h": float(t.get("h", 1.0)),
             "nodes": [{"id": int(r["id"]), "parent": int(r.get("parent", -1) if r.get("parent") is not None else -1),
                        "prob": float(r.get("prob", 1.0))} for r in t["nodes"]]}
    else:
        raise ValidationError(f"unknown tree type {kind!r}")
    out["tree"] = t
    out.setdefault("name", "scenario")
    out.setdefault("terminal", "0")
    g = out["generator"]
    if not isinstance(g, dict) or "family" not in g:
        raise ValidationError("generator section needs a family")
    out["generator"] = {"family": g["family"], "params": dict(g.get("params", {}))}
    solver = dict(out.get("solver", {}))
    extra = set(solver) - SOLVER_KEYS
    if extra:
        raise ValidationError(f"unknown solver options {sorted(extra)}")
    if "barrier" not in solver:
        has_l, has_u = out.get("L") is not None, out.get("U") is not None
        solver["barrier"] = "double" if has_l and has_u else "lower" if has_l else "upper" if has_u else "none"
    if solver["barrier"] not in BARRIERS:
        raise ValidationError(f"unknown barrier configuration {solver['barrier']!r}")
    out["solver"] = solver
    ver = dict(out.get("verify", {}))
    extra = set(ver) - VERIFY_KEYS
    if extra:
        raise ValidationError(f"unknown verify options {sorted(extra)}")
    ver.setdefault("suites", list(SUITES))
    bad = [s for s in ver["suites"] if s not in SUITES]
    if bad:
        raise ValidationError(f"unknown verification suites {bad}")
    ver.setdefault("trials", 50)
    ver.setdefault("seed", 0)
    budgets = dict(ver.get("budgets", {}))
    budgets.setdefault("max_rules", DEFAULT_MAX_RULES)
    budgets.setdefault("max_pairs", DEFAULT_MAX_PAIRS)
    ver["budgets"] = budgets
    out["verify"] = ver
    return out


class Scenario:
    """A validated scenario document."""

    def __init__(self, doc):
        self.doc = _normalize(doc)
        self.build()  # fail early on bad data

    @classmethod
    def parse(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"scenario is not valid JSON: {exc}") from None
        return cls(doc)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.parse(fh.read())
        except OSError as exc:
            raise ValidationError(f"cannot read scenario {path}: {exc}") from None

    def emit(self):
        return json.dumps(self.doc, indent=2, sort_keys=True) + "\n"

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.doc == other.doc

    @property
    def name(self):
        return self.doc["name"]

    @property
    def barrier(self):
        return self.doc["solver"]["barrier"]

    def with_horizon(self, N):
        """Copy with the binomial tree depth replaced by N."""
        if self.doc["tree"]["type"] != "binomial":
            raise ValidationError("horizon studies need a binomial tree")
        doc = copy.deepcopy(self.doc)
        doc["tree"]["N"] = int(N)
        return Scenario(doc)

    def make_tree(self):
        t = self.doc["tree"]
        if t["type"] == "binomial":
            tree = binomial_tree(t["N"], t["h"], t["p"])
        else:
            tree = explicit_tree(t["nodes"], t["h"])
        flags = _values(self.doc["terminal"], tree, "terminal") != 0
        return tree.set_terminal(flags)

    def build(self):
        d = self.doc
        tree = self.make_tree()
        xi = terminal_array(tree, np.where(tree.at_T, _values(d["xi"], tree, "xi", terminal=True), 0.0))
        f = gen.from_spec(d["generator"])
        gen.check_monotone(f, np.arange(tree.N + 1) * tree.h)
        V = None
        if d.get("V") is not None:
            vs = d["V"]
            if not isinstance(vs, dict):
                raise ValidationError("V needs interval and jump parts")
            star = _values(vs.get("interval", 0.0), tree, "V.interval")
            star[0] = 0.0
            V = FVProcess.from_increments(tree, star, _values(vs.get("jump", 0.0), tree, "V.jump"))
        barrier = d["solver"]["barrier"]
        L = _barrier(d.get("L"), tree, "L") if barrier in ("lower", "double") else None
        U = _barrier(d.get("U"), tree, "U") if barrier in ("upper", "double") else None
        if barrier in ("lower", "double") and L is None:
            raise ValidationError("lower barrier configuration needs an L section")
        if barrier in ("upper", "double") and U is None:
            raise ValidationError("upper barrier configuration needs a U section")
        _precheck(tree, xi, L, U)
        return Problem(tree, xi, f, V, L, U, barrier, dict(d["solver"]))


def _precheck(tree, xi, L, U):
    """Separation and terminal compatibility L_T <= xi <= U_T."""
    if L is not None and U is not None:
        check_separation(tree, L, U, xi)
        return
    T = tree.at_T
    if L is not None and np.any((xi - L.inst)[T] < 0):
        v = int(np.flatnonzero(T & (xi < L.inst))[0])
        raise SeparationError(f"terminal value below L at node {v}", float(L.inst[v] - xi[v]), v,
                              str(tree.level[v]))
    if U is not None and np.any((U.inst - xi)[T] < 0):
        v = int(np.flatnonzero(T & (xi > U.inst))[0])
        raise SeparationError(f"terminal value above U at node {v}", float(xi[v] - U.inst[v]), v,
                              str(tree.level[v]))


def problem_doc(prob, name="witness"):
    """Scenario document reproducing a numeric problem (explicit tree, per-node lists)."""
    tree = prob.tree
    nodes = [{"id": v, "parent": int(tree.parent[v]), "prob": float(tree.prob[v])} for v in range(tree.n)]
    doc = {
        "name": name,
        "tree": {"type": "explicit", "h": tree.h, "nodes": nodes},
        "terminal": [float(x) for x in tree.at_T],
        "xi": [float(x) for x in prob.xi],
        "generator": prob.f.spec(),
        "solver": dict(prob.solver, barrier=prob.barrier),
    }
    if prob.V is not None:
        doc["V"] = {"interval": [float(x) for x in prob.V.star], "jump": [float(x) for x in prob.V.right]}
    for key, B in (("L", prob.L), ("U", prob.U)):
        if B is not None:
            doc[key] = {"instant": [float(x) for x in B.inst], "plus": [float(x) for x in B.plus]}
    return doc
