"""Experiment orchestration behind the CLI: artifacts, reports, exit codes."""
from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import asdict

import numpy as np

from .double import check_separation, solve_double
from .dynkin import epsilon_optimal, game_value, plain_vs_system, saddle_check
from .errors import BudgetError, InvariantError, RbsdeError, ValidationError
from .fexp import solve_bsde
from .generators import Affine
from .invariants import verify_solution
from .lower import solve_lower, solve_upper
from .oracle import OracleBudget
from .scenario import SUITES
from .verify import Context, RandomFamily, run_verify as verify_suites

HORIZON_SLACK = 1e-6
LOWER_DEFAULT = "direct"
DOUBLE_DEFAULT = "decoupled"


def versions():
    from . import __version__
    return {"rbsde": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.bool_):
        return bool(x)
    return str(x)


def _write_log(path, log):
    keys = []
    for row in log:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys or ["iter"], lineterminator="\n")
        w.writeheader()
        for row in log:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def fail(out_dir, err):
    """Record an error in the artifact directory; returns its exit code."""
    rec = err.record()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_json(os.path.join(out_dir, "error.json"), rec)
    return err.exit_code, rec


def solve_problem(prob, scheme=None, **opts):
    """Dispatch on the barrier configuration; returns a Solution."""
    tree = prob.tree
    barrier = prob.barrier
    opts = {k: v for k, v in opts.items() if v is not None}
    if barrier == "none":
        return solve_bsde(tree, prob.xi, prob.f, prob.V)
    if barrier == "lower":
        return solve_lower(tree, prob.xi, prob.f, prob.V, prob.L, scheme or LOWER_DEFAULT, **opts)
    if barrier == "upper":
        return solve_upper(tree, prob.xi, prob.f, prob.V, prob.U, scheme or LOWER_DEFAULT, **opts)
    return solve_double(tree, prob.xi, prob.f, prob.V, prob.L, prob.U, scheme or DOUBLE_DEFAULT, **opts)


def _solver_opts(prob, overrides):
    opts = dict(prob.solver)
    opts.update({k: v for k, v in overrides.items() if v is not None})
    scheme = opts.pop("scheme", None)
    opts.pop("barrier", None)
    if "ladder" in opts and opts["ladder"] is not None:
        opts["ladder"] = tuple(opts["ladder"])
    return scheme, opts


def run_solve(scenario, out_dir, barrier=None, **overrides):
    """Solve a scenario and write Y/M/K (or R+/R-) CSVs plus report.json.

    Returns (exit code, report).  Exit 0 iff every invariant passed.
    """
    started = time.perf_counter()
    try:
        prob = scenario.build()
        if barrier is not None and barrier != prob.barrier:
            doc = dict(scenario.doc, solver=dict(scenario.doc["solver"], barrier=barrier))
            prob = type(scenario)(doc).build()
        scheme, opts = _solver_opts(prob, overrides)
        sep = None
        if prob.barrier == "double":
            sep = check_separation(prob.tree, prob.L, prob.U, prob.xi)[1]
        sol = solve_problem(prob, scheme, **opts)
    except RbsdeError as err:
        return fail(out_dir, err)
    os.makedirs(out_dir, exist_ok=True)
    tree = prob.tree
    sol.Y.to_csv(os.path.join(out_dir, "Y.csv"))
    sol.M.to_csv(os.path.join(out_dir, "M.csv"))
    if prob.barrier == "double":
        sol.Rp.to_csv(os.path.join(out_dir, "Rplus.csv"))
        sol.Rm.to_csv(os.path.join(out_dir, "Rminus.csv"))
    elif prob.barrier == "upper":
        sol.Rm.to_csv(os.path.join(out_dir, "K.csv"))
    else:
        sol.Rp.to_csv(os.path.join(out_dir, "K.csv"))
    _write_log(os.path.join(out_dir, "log.csv"), sol.log)
    inv = verify_solution(tree, sol, prob.xi, prob.V, prob.L, prob.U, strict=False)
    rep = {
        "scenario": scenario.name,
        "barrier": prob.barrier,
        "scheme": sol.scheme,
        "y0": sol.y0,
        "y0_plus": float(sol.Y.plus[0]),
        "iterations": len(sol.log),
        "invariants": inv,
        "separation_min_gap": sep,
        "diagnostics": {k: v for k, v in sol.diagnostics.items() if k not in inv},
        "versions": versions(),
        "seconds": round(time.perf_counter() - started, 4),
    }
    if sol.components:
        rep["component_iterations"] = [len(c.log) for c in sol.components]
    rep["ok"] = not inv["failed"]
    _write_json(os.path.join(out_dir, "report.json"), rep)
    if inv["failed"]:
        err = InvariantError("solution violates " + ", ".join(inv["failed"]))
        _write_json(os.path.join(out_dir, "error.json"), err.record())
        return err.exit_code, rep
    return 0, rep


def run_dynkin(scenario, out_dir, mode="dp", epsilon=None, budget=None):
    """Game value by DP and/or enumeration, with optional eps-optimal strategies."""
    budget = budget or OracleBudget()
    try:
        prob = scenario.build()
        if prob.L is None or prob.U is None:
            raise ValidationError("dynkin needs both barriers L and U")
        tree = prob.tree
        out = game_value(tree, prob.xi, prob.f, prob.L, prob.U, prob.V, mode, budget)
        rep = {"scenario": scenario.name, "mode": mode, "versions": versions(),
               "budgets": {"max_rules": budget.max_rules, "max_pairs": budget.max_pairs}}
        ok = True
        dp_sol = solve_double(tree, prob.xi, prob.f, prob.V, prob.L, prob.U, "direct")
        if "dp" in out:
            rep["dp_value"] = out["dp_value"]
        if "exact" in out:
            rep["exact"] = out["exact"]
            good, gaps = saddle_check(tree, dp_sol.Y, prob.f, prob.L, prob.U, prob.xi, prob.V, budget)
            rep["saddle"] = gaps
            rep["plain_vs_system"] = plain_vs_system(tree, prob.xi, prob.f, prob.L, prob.U, prob.V, budget)
            ok = ok and good
        if epsilon is not None:
            e = epsilon_optimal(tree, dp_sol, epsilon, prob.L, prob.U, prob.xi, prob.f, prob.V,
                                budget, guarantee=mode != "dp")
            e["rho"] = e["rho"].describe()
            e["delta"] = e["delta"].describe()
            rep["epsilon"] = dict(e, epsilon=epsilon)
            ok = ok and e["ok"]
    except RbsdeError as err:
        return fail(out_dir, err)
    os.makedirs(out_dir, exist_ok=True)
    dp_sol.Y.to_csv(os.path.join(out_dir, "value.csv"))
    rep["ok"] = bool(ok)
    _write_json(os.path.join(out_dir, "report.json"), rep)
    return (0 if ok else 1), rep


def run_verify(out_dir, scenario=None, suites=None, trials=None, seed=None, max_rules=None,
               max_pairs=None, family=None, solvers=None):
    """Verification suites on a scenario's data or on the random family."""
    ver = scenario.doc["verify"] if scenario is not None else {}
    suites = list(suites or ver.get("suites") or SUITES)
    trials = int(trials if trials is not None else ver.get("trials", 50))
    seed = int(seed if seed is not None else ver.get("seed", 0))
    budgets = ver.get("budgets", {})
    try:
        bad = [s for s in suites if s not in SUITES]
        if bad:
            raise ValidationError(f"unknown verification suites {bad}")
        budget = OracleBudget(int(max_rules or budgets.get("max_rules", OracleBudget.max_rules)),
                              int(max_pairs or budgets.get("max_pairs", OracleBudget.max_pairs)))
        problem = scenario.build() if scenario is not None else None
    except (RbsdeError, ValueError) as err:
        if not isinstance(err, RbsdeError):
            err = ValidationError(str(err))
        return fail(out_dir, err)
    ctx = Context(solvers, budget, family or RandomFamily())
    rep = verify_suites(suites, trials, seed, ctx, problem)
    timings = rep.pop("timings")
    rep["source"] = scenario.name if scenario is not None else "random-family"
    rep["family"] = None if scenario is not None else asdict(ctx.family)
    rep["versions"] = versions()
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "report.json"), rep)
    with open(os.path.join(out_dir, "suites.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "status", "trials", "skipped", "worst_metric", "worst_value", "tol"])
        for s in rep["suites"]:
            wst = s["worst"] or {}
            w.writerow([s["suite"], s["status"], s["trials"], s["skipped"], wst.get("metric", ""),
                        repr(wst["value"]) if "value" in wst else "", wst.get("tol", "")])
    with open(os.path.join(out_dir, "timings.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "seconds"])
        w.writerows(timings.items())
    if not rep["ok"]:
        return 1, rep
    if any(s["status"] == "skipped" for s in rep["suites"]):
        return BudgetError.exit_code, rep
    return 0, rep


def _constant_data(prob):
    x = prob.xi[prob.tree.at_T]
    no_v = prob.V is None or (not np.any(prob.V.inst) and not np.any(prob.V.plus))
    return bool(np.all(x == x[0])) and no_v and prob.barrier == "none"


def horizon_study(scenario, out_dir, a_max=None):
    """Root values of the truncations a = 1..a_max and their successive differences.

    For an affine generator a - b*y with b > 0, no barriers, no V and a
    constant terminal value the ratio of successive differences is
    asserted to stay below 1/(1 + b*h) + 1e-6.
    """
    hz = scenario.doc.get("horizon") or {}
    a_max = int(a_max or hz.get("a_max", 12))
    try:
        if a_max < 2:
            raise ValidationError("horizon study needs a_max >= 2")
        rows = []
        asserting = True
        bound = None
        for a in range(1, a_max + 1):
            prob = scenario.with_horizon(a).build()
            scheme, opts = _solver_opts(prob, {})
            sol = solve_problem(prob, scheme, **opts)
            rows.append({"a": a, "y0": sol.y0})
            f = prob.f
            asserting = asserting and isinstance(f, Affine) and f.b > 0 and _constant_data(prob)
            if isinstance(f, Affine) and f.b > 0:
                bound = 1.0 / (1.0 + f.b * prob.tree.h)
    except RbsdeError as err:
        return fail(out_dir, err)
    for i, r in enumerate(rows):
        r["diff"] = abs(rows[i + 1]["y0"] - r["y0"]) if i + 1 < len(rows) else None
    for i, r in enumerate(rows):
        prev = rows[i - 1]["diff"] if i > 0 else None
        r["ratio"] = r["diff"] / prev if prev and r["diff"] is not None else None
    diffs = [r["diff"] for r in rows if r["diff"] is not None]
    ratios = [r["ratio"] for r in rows if r["ratio"] is not None]
    rep = {
        "scenario": scenario.name,
        "a_max": a_max,
        "rows": rows,
        "asserting": asserting,
        "bound": bound + HORIZON_SLACK if bound is not None else None,
        "max_ratio": max(ratios) if ratios else None,
        "diffs_nonincreasing": all(d2 <= d1 + 1e-15 for d1, d2 in zip(diffs, diffs[1:])),
        "versions": versions(),
    }
    ok = True
    if asserting and bound is not None:
        ok = all(q <= bound + HORIZON_SLACK for q in ratios)
    rep["ok"] = ok
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "horizon.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "y0", "diff", "ratio"])
        for r in rows:
            w.writerow([r["a"], repr(r["y0"]), "" if r["diff"] is None else repr(r["diff"]),
                        "" if r["ratio"] is None else repr(r["ratio"])])
    _write_json(os.path.join(out_dir, "report.json"), rep)
    return (0 if ok else 1), rep
