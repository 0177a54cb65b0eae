"""Invariant checks shared by the reflected solvers."""
from __future__ import annotations

import numpy as np

from .errors import InvariantError
from .fexp import dynamics_residual, generator_cost, terminal_array
from .filtration import class_d_norm
from .processes import martingale_gap

MIN_TOL = 1e-9
DYN_TOL = 1e-9


def minimality_terms(tree, sol, L=None, U=None):
    """Per-node Skorokhod terms for the lower and upper reflection.

    Returns two arrays indexed by node; the period channel is stored at the
    child node and the right-jump channel at the node itself.
    """
    par = tree.parent[1:]
    livep = tree.live[par]
    lower = np.zeros(tree.n)
    upper = np.zeros(tree.n)
    Y = sol.Y
    if L is not None:
        lower[1:] += np.where(livep, (Y.plus[par] - L.plus[par]) * sol.Rp.star[1:], 0.0)
        lower += np.where(tree.live, (Y.inst - L.inst) * sol.Rp.right, 0.0)
    if U is not None:
        upper[1:] += np.where(livep, (U.plus[par] - Y.plus[par]) * sol.Rm.star[1:], 0.0)
        upper += np.where(tree.live, (U.inst - Y.inst) * sol.Rm.right, 0.0)
    return lower, upper


def minimality_residual(tree, sol, L=None, U=None):
    lo, up = minimality_terms(tree, sol, L, U)
    return float(np.abs(lo).max(initial=0.0)), float(np.abs(up).max(initial=0.0))


def singularity_violation(sol):
    """Largest per-increment overlap of R+ and R-; zero means mutually singular."""
    a = np.minimum(sol.Rp.star, sol.Rm.star)
    b = np.minimum(sol.Rp.right, sol.Rm.right)
    return float(max(a.max(initial=0.0), b.max(initial=0.0)))


def report(tree, sol, xi, V=None, L=None, U=None):
    """Invariant summary of a solution; values are worst-case magnitudes."""
    x = terminal_array(tree, xi)
    lo_res, up_res = minimality_residual(tree, sol, L, U)
    live = tree.live
    rep = {
        "y0": sol.y0,
        "dynamics_residual": dynamics_residual(tree, sol, x, V),
        "terminal_error": float(np.max(np.abs(sol.Y.inst[tree.at_T] - x[tree.at_T]), initial=0.0)),
        "martingale_gap": martingale_gap(tree, sol.M),
        "minimality_lower": lo_res,
        "minimality_upper": up_res,
        "singularity_violation": singularity_violation(sol),
        "predictability_gap": max(sol.Rp.predictability_gap(), sol.Rm.predictability_gap()),
        "lower_barrier_gap": 0.0,
        "upper_barrier_gap": 0.0,
        "generator_cost": generator_cost(tree, sol),
        "reflection_mass": float(tree.expect_root(sol.Rp.inst) + tree.expect_root(sol.Rm.inst)),
        "norm_Y": class_d_norm(tree, sol.Y),
    }
    if L is not None:
        g = np.maximum(L.inst - sol.Y.inst, np.where(tree.level < tree.N, L.plus - sol.Y.plus, 0.0))
        rep["lower_barrier_gap"] = float(np.max(np.where(live, g, 0.0), initial=0.0))
    if U is not None:
        g = np.maximum(sol.Y.inst - U.inst, np.where(tree.level < tree.N, sol.Y.plus - U.plus, 0.0))
        rep["upper_barrier_gap"] = float(np.max(np.where(live, g, 0.0), initial=0.0))
    if L is None:
        rep["lower_mass"] = float(np.abs(sol.Rp.inst).max(initial=0.0))
    if U is None:
        rep["upper_mass"] = float(np.abs(sol.Rm.inst).max(initial=0.0))
    return rep


def failures(rep, tol=MIN_TOL):
    """Names of invariants that the report violates."""
    bad = []
    for key in ("dynamics_residual", "martingale_gap", "predictability_gap"):
        if rep[key] > DYN_TOL:
            bad.append(key)
    if rep["terminal_error"] != 0.0:
        bad.append("terminal_error")
    for key in ("minimality_lower", "minimality_upper", "lower_barrier_gap",
                "upper_barrier_gap", "lower_mass", "upper_mass"):
        if rep.get(key, 0.0) > tol:
            bad.append(key)
    if rep["singularity_violation"] != 0.0:
        bad.append("singularity_violation")
    if not np.isfinite(rep["generator_cost"]):
        bad.append("generator_cost")
    return bad


def verify_solution(tree, sol, xi, V=None, L=None, U=None, strict=True):
    rep = report(tree, sol, xi, V, L, U)
    bad = failures(rep)
    rep["failed"] = bad
    sol.diagnostics.update(rep)
    if bad and strict:
        raise InvariantError("solution violates " + ", ".join(f"{k}={rep[k]:.3g}" for k in bad))
    return rep
