"""Dynkin games over stopping systems and their link to two-barrier solutions."""
from __future__ import annotations

import numpy as np

from .double import check_separation, solve_direct
from .errors import InvariantError
from .fexp import terminal_array, v_parts
from .filtration import CONTINUE, STOP, STOP_PLUS, StoppingRule, class_d_norm, rule_codes
from .oracle import OracleBudget, oracle_game, pair_values
from .processes import FVProcess

SADDLE_TOL = 1e-9


def game_value(tree, xi, f, L, U, V=None, mode="dp", budget=None, kind="system"):
    """Value of the game in DP mode (clamped sweep) and/or by enumeration.

    Returns a dict: ``dp`` holds the value process, ``exact`` the
    enumeration result at the root (sup-inf, inf-sup).
    """
    check_separation(tree, L, U, xi)
    out = {}
    if mode in ("dp", "both"):
        sol = solve_direct(tree, xi, f, V, L, U)
        out["dp"] = sol.Y
        out["dp_value"] = sol.y0
    if mode in ("exact", "both"):
        g = oracle_game(tree, xi, f, L, U, V, kind, kind, budget)
        out["exact"] = {"supinf": g["supinf"], "infsup": g["infsup"],
                        "argmax": g["argmax"].describe(), "argmin": g["argmin"].describe()}
    return out


def value_at(Y, rule):
    """Read a process at a rule's stopping slots (NaN elsewhere)."""
    vals = np.full(Y.tree.n, np.nan)
    vals = np.where(rule.codes == STOP, Y.inst, vals)
    return np.where(rule.codes == STOP_PLUS, Y.plus, vals)


def saddle_check(tree, Y, f, L, U, xi, V=None, budget=None, tol=SADDLE_TOL):
    """sup-inf = inf-sup = Y_0 within ``tol`` (enumeration over system-rule pairs)."""
    g = oracle_game(tree, xi, f, L, U, V, budget=budget)
    y0 = float(Y.inst[0])
    gaps = {"supinf_infsup": abs(g["supinf"] - g["infsup"]), "value": abs(g["supinf"] - y0)}
    return max(gaps.values()) <= tol, gaps


def epsilon_optimal(tree, sol, eps, L, U, xi, f, V=None, budget=None, guarantee=False):
    """Strategies stopping once Y comes within eps of a barrier.

    The maximizer stops at the first slot with Y <= L + eps, the minimizer
    at the first slot with Y >= U - eps (a right-limit hit gives a
    right-limit stop).  The realized payoff of the pair is compared with
    Y_0 against the bound eps*(N + 2).  With ``guarantee`` set, the worst
    reply to each strategy is also enumerated.
    """
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    Y = sol.Y
    top = tree.level < tree.N
    rho = StoppingRule.first_hit(tree, Y.inst <= L.inst + eps, (Y.plus <= L.plus + eps) & top)
    delta = StoppingRule.first_hit(tree, Y.inst >= U.inst - eps, (Y.plus >= U.plus - eps) & top)
    J = pair_values(tree, f, xi, L, U, rho.codes, delta.codes, V)[0, 0]
    bound = eps * (tree.N + 2)
    rep = {"rho": rho, "delta": delta, "realized": float(J), "value": sol.y0,
           "gap": abs(float(J) - sol.y0), "bound": bound}
    rep["ok"] = rep["gap"] <= bound
    if guarantee:
        budget = budget or OracleBudget()
        budget.check_rules(tree, "system")
        codes = rule_codes(tree, "system", budget.max_rules)
        worst_min = pair_values(tree, f, xi, L, U, rho.codes, codes, V).min()
        worst_max = pair_values(tree, f, xi, L, U, codes, delta.codes, V).max()
        rep["maximizer_shortfall"] = float(sol.y0 - worst_min)
        rep["minimizer_excess"] = float(worst_max - sol.y0)
        rep["ok"] = rep["ok"] and rep["maximizer_shortfall"] <= bound and rep["minimizer_excess"] <= bound
    return rep


def stability_bound_check(tree, data1, data2, budget=None, slack=1e-9):
    """Both sides of the two-barrier stability estimate.

    ``data`` dicts carry xi, f, V, L, U.  The left side is the class-(D)
    distance of the two solutions; the right side adds the terminal,
    barrier and driving-process distances and the largest expected
    generator gap along the first game's pair trajectories.
    """
    budget = budget or OracleBudget()
    s1 = solve_direct(tree, data1["xi"], data1["f"], data1.get("V"), data1["L"], data1["U"])
    s2 = solve_direct(tree, data2["xi"], data2["f"], data2.get("V"), data2["L"], data2["U"])
    lhs = class_d_norm(tree, s1.Y - s2.Y)
    x1 = terminal_array(tree, data1["xi"])
    x2 = terminal_array(tree, data2["xi"])
    dxi = tree.expect_root(_terminal_leaf(tree, np.abs(x1 - x2)))
    dL = class_d_norm(tree, data1["L"] - data2["L"])
    dU = class_d_norm(tree, data1["U"] - data2["U"])
    dV = 0.0
    V1, V2 = data1.get("V"), data2.get("V")
    if V1 is not None or V2 is not None:
        s_a, r_a = v_parts(tree, V1)
        s_b, r_b = v_parts(tree, V2)
        tv = FVProcess.from_increments(tree, np.abs(s_a - s_b), np.abs(r_a - r_b))
        dV = tree.expect_root(tv.inst)
    budget.check_pairs(tree, "system", "system")
    codes = rule_codes(tree, "system", budget.max_rules)
    _, cost = pair_values(tree, data1["f"], x1, data1["L"], data1["U"], codes, codes,
                          data1.get("V"), f_alt=data2["f"])
    fgap = float(cost.max())
    rhs = dxi + 2 * dL + 2 * dU + dV + fgap
    return {"lhs": lhs, "rhs": rhs, "terms": {"xi": dxi, "L": dL, "U": dU, "V": dV, "f": fgap},
            "ok": lhs <= rhs + slack}


def _terminal_leaf(tree, per_node):
    """Per-node array whose leaf entries carry the value at the path's terminal node."""
    out = np.asarray(per_node, dtype=float).copy()
    for v in range(tree.n):
        if tree.after_T[v]:
            out[v] = out[tree.parent[v]]
    return out


def plain_vs_system(tree, xi, f, L, U, V=None, budget=None):
    """Game values when both players use plain rules and when both use systems."""
    plain = oracle_game(tree, xi, f, L, U, V, "plain", "plain", budget)
    system = oracle_game(tree, xi, f, L, U, V, "system", "system", budget)
    return {"plain": plain["supinf"], "system": system["supinf"],
            "plain_infsup": plain["infsup"], "system_infsup": system["infsup"]}
