"""One-barrier reflected BSDE solvers and their diagnostics.

All solvers take the terminal value ``xi``, a generator ``f``, an
optional driving process ``V`` and a lower barrier ``L`` (a
LatticeProcess).  The upper-barrier problem is solved through the
mirrored data.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceError, InvariantError, ValidationError
from .fexp import assemble, rule_sweep, solve_bsde, sweep, terminal_array, v_parts
from .filtration import class_d_norm, rule_codes
from .generators import LinearDrift, Mirrored, Moreau, NodeDrift, Truncated
from .processes import FVProcess, LatticeProcess, doob_parts
from .snell import snell_envelope

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 5000
BRACKET_TOL = 1e-9
UNSHIFTED_MAX = 0.5


def _norm_diff(tree, A, B):
    return class_d_norm(tree, A - B)


def _finish(tree, Y, fY, V, scheme, log, f=None):
    sol = assemble(tree, Y, fY, V, scheme, log)
    return sol


def _eval_f(tree, f, Y):
    """f(t, Y(t+)) at every live node."""
    out = np.zeros(tree.n)
    for t in range(tree.N):
        idx = tree.level_nodes(t)
        live = tree.live[idx]
        if np.any(live):
            out[idx[live]] = f.at(idx[live], t * tree.h, Y.plus[idx[live]])
    return out


def accumulated(tree, drift, V=None):
    """C = sum of h*drift over past periods plus V, as a process."""
    vstar, vright = v_parts(tree, V)
    ci = np.zeros(tree.n)
    cp = np.zeros(tree.n)
    cp[0] = vright[0]
    live = tree.live
    for v in range(1, tree.n):
        q = tree.parent[v]
        step = tree.h * drift[q] if live[q] else 0.0
        ci[v] = cp[q] + step + vstar[v]
        cp[v] = ci[v] + vright[v]
    return LatticeProcess(tree, ci, cp)


def solve_linear(tree, xi, f, V=None, L=None):
    """Reflected equation with a y-independent generator, via a Snell envelope.

    The payoff C + L (C + xi at T) is enveloped and C subtracted again,
    where C accumulates the generator and V.
    """
    if not f.time_only:
        raise ValidationError("solve_linear needs a generator that does not depend on y")
    drift = _eval_f(tree, f, LatticeProcess.zeros(tree))
    return _linear_from_drift(tree, xi, drift, V, L)


def _linear_from_drift(tree, xi, drift, V, L, scheme="linear"):
    x = terminal_array(tree, xi)
    L = L if L is not None else LatticeProcess.constant(tree, -1e300)
    C = accumulated(tree, drift, V)
    payoff = C + L
    res = snell_envelope(tree, payoff, x + C.inst)
    Y = res.Y - C
    sol = assemble(tree, Y, drift, V, scheme)
    sol.diagnostics["envelope_K_gap"] = float(max(np.abs(sol.R.inst - res.K.inst).max(),
                                                  np.abs(sol.R.plus - res.K.plus).max()))
    return sol


def solve_direct_lower(tree, xi, f, V=None, L=None):
    """Slotwise clamped backward sweep (cross-check solver)."""
    Y, fY = sweep(tree, xi, f, V, lower=L)
    return assemble(tree, Y, fY, V, "direct")


def _start_below(tree, xi, f, V, L):
    """A process below the solution: max(L, unreflected solution)."""
    base = solve_bsde(tree, xi, f, V).Y
    if L is None:
        return base
    Y = base.maximum(L)
    Y.inst[tree.stopped] = base.inst[tree.stopped]
    Y.plus[tree.stopped] = base.plus[tree.stopped]
    return Y


def solve_lipschitz_picard(tree, xi, f, V=None, L=None, tol=DEFAULT_TOL,
                           max_iter=DEFAULT_MAX_ITER, shift=None, start=None):
    """Picard iteration on the frozen generator.

    ``shift = 0`` freezes f entirely (each step is a linear reflected
    equation solved through its Snell envelope); the iterates alternate
    around the solution and contract when ``lambda*h < 1``.  ``shift = s
    >= lambda`` keeps ``-s*y`` implicit and freezes ``f(Y) + s*Y``; the
    iterates then increase to the solution for any step size.  By default
    the unshifted form is used when it contracts.
    """
    lam = f.lipschitz
    if lam is None:
        raise ValidationError("Picard iteration needs a generator with a Lipschitz constant")
    if shift is None:
        shift = 0.0 if lam * tree.h <= UNSHIFTED_MAX else lam
    if 0 < shift < lam:
        raise ValidationError("Picard shift must be 0 or at least the Lipschitz constant")
    Y = start if start is not None else _start_below(tree, xi, f, V, L)
    iterates = [Y]
    log = []
    for it in range(1, max_iter + 1):
        fy = _eval_f(tree, f, Y)
        if shift == 0:
            Yn = _linear_from_drift(tree, xi, fy, V, L).Y
        else:
            g = LinearDrift(shift, fy + shift * Y.plus)
            Yn, _ = sweep(tree, xi, g, V, lower=L)
        gap = _norm_diff(tree, Yn, Y)
        log.append({"iter": it, "gap": gap, "y0": float(Yn.inst[0])})
        if shift > 0 and not Y.le(Yn, tol=BRACKET_TOL):
            drop = max(float(np.max(Y.inst - Yn.inst)), float(np.max(Y.plus - Yn.plus)))
            raise InvariantError(f"shifted Picard iterate {it} decreased by {drop:.3g}")
        iterates.append(Yn)
        Y = Yn
        if gap <= tol:
            break
    else:
        raise ConvergenceError(f"Picard iteration did not reach tol {tol} in {max_iter} steps "
                               f"(last gap {log[-1]['gap']:.3g})", log)
    sol = _finish(tree, Y, _eval_f(tree, f, Y), V, "lipschitz-picard", log)
    sol.diagnostics.update(_bracket_report(tree, iterates, shift))
    sol.diagnostics["picard_shift"] = shift
    sol.diagnostics["iterations"] = len(log)
    return sol


def _bracket_report(tree, iterates, shift):
    """Interleaving of the iterates around the limit.

    For the unshifted form even iterates lie below and odd iterates above
    the limit; this is asserted.  Whether the even (odd) iterates are also
    monotone among themselves is reported only.
    """
    lim = iterates[-1]
    rep = {"bracket_ok": True, "even_increasing": True, "odd_decreasing": True}
    if shift > 0:
        return rep
    for k, Yk in enumerate(iterates[:-1]):
        ok = Yk.le(lim, tol=BRACKET_TOL) if k % 2 == 0 else lim.le(Yk, tol=BRACKET_TOL)
        if not ok:
            rep["bracket_ok"] = False
            raise InvariantError(f"Picard iterate {k} is on the wrong side of the limit")
        if k >= 2:
            prev = iterates[k - 2]
            if k % 2 == 0 and not prev.le(Yk, tol=BRACKET_TOL):
                rep["even_increasing"] = False
            if k % 2 == 1 and not Yk.le(prev, tol=BRACKET_TOL):
                rep["odd_decreasing"] = False
    return rep


def solve_moreau(tree, xi, f, V=None, L=None, ladder=None, tol=DEFAULT_TOL,
                 max_iter=DEFAULT_MAX_ITER, rho=None, log=None):
    """Limit of the Lipschitz solutions for the Moreau regularizations f_n.

    The solutions increase in n; the ladder doubles from 1 until two
    successive rungs agree within ``tol`` (or the given ladder ends).
    """
    if f.lower_bound(0.0) is None:
        raise ValidationError("Moreau scheme requires declared lower bound")
    rungs = list(ladder) if ladder is not None else [2 ** k for k in range(16)]
    log = [] if log is None else log
    Y = None
    prev = None
    for n in rungs:
        fn = Moreau(f, n, rho)
        start = None if Y is None else Y
        sol = solve_lipschitz_picard(tree, xi, fn, V, L, tol=tol * 0.1, max_iter=max_iter,
                                     shift=float(n), start=start)
        Yn = sol.Y
        if prev is not None and not prev.le(Yn, tol=BRACKET_TOL):
            raise InvariantError(f"Moreau solutions decreased at n={n}")
        gap = None if prev is None else _norm_diff(tree, Yn, prev)
        exact = _exact_along(tree, fn, f, Yn)
        log.append({"moreau_n": n, "gap": gap, "exact": exact, "picard_iters": len(sol.log),
                    "y0": float(Yn.inst[0])})
        prev = Y = Yn
        if exact or (gap is not None and gap <= tol):
            break
    else:
        if ladder is None:
            raise ConvergenceError("Moreau ladder did not settle", log)
    out = _finish(tree, Y, _eval_f(tree, f, Y), V, "moreau", log)
    return out


def solve_monotone(tree, xi, f, V=None, L=None, ladder=None, tol=DEFAULT_TOL,
                   floor=None, inner_ladder=None, max_iter=DEFAULT_MAX_ITER):
    """Truncation from below, f v (-n g), with the Moreau scheme inside.

    The truncated solutions decrease in n; the loop stops when two
    successive rungs agree within ``tol``.
    """
    floor = floor or (lambda t: math.exp(-t))
    rungs = list(ladder) if ladder is not None else [2 ** k for k in range(20)]
    log = []
    prev = None
    for n in rungs:
        fn = Truncated(f, n, floor)
        inner = []
        sol = solve_moreau(tree, xi, fn, V, L, inner_ladder, tol, max_iter, log=inner)
        Yn = sol.Y
        if prev is not None and not Yn.le(prev, tol=BRACKET_TOL):
            raise InvariantError(f"truncated solutions increased at n={n}")
        gap = None if prev is None else _norm_diff(tree, Yn, prev)
        exact = _exact_along(tree, fn, f, Yn)
        log.append({"truncation_n": n, "gap": gap, "exact": exact, "moreau_rungs": len(inner),
                    "y0": float(Yn.inst[0])})
        prev = Yn
        if exact or (gap is not None and gap <= tol):
            break
    else:
        if ladder is None:
            raise ConvergenceError("truncation ladder did not settle", log)
    return _finish(tree, prev, _eval_f(tree, f, prev), V, "monotone-limit", log)


def _exact_along(tree, approx, f, Y, tol=1e-12):
    """True when the approximating generator equals f at every Y(t+)."""
    a = _eval_f(tree, approx, Y)
    b = _eval_f(tree, f, Y)
    return bool(np.all(np.abs(a - b) <= tol * np.maximum(1.0, np.abs(b))))


SCHEMES = {
    "linear": lambda tree, xi, f, V, L, opts: solve_linear(tree, xi, f, V, L),
    "direct": lambda tree, xi, f, V, L, opts: solve_direct_lower(tree, xi, f, V, L),
    "picard": lambda tree, xi, f, V, L, opts: solve_lipschitz_picard(
        tree, xi, f, V, L, opts.get("tol", DEFAULT_TOL), opts.get("max_iter", DEFAULT_MAX_ITER),
        opts.get("shift")),
    "moreau": lambda tree, xi, f, V, L, opts: solve_moreau(
        tree, xi, f, V, L, opts.get("ladder"), opts.get("tol", DEFAULT_TOL),
        opts.get("max_iter", DEFAULT_MAX_ITER)),
    "monotone": lambda tree, xi, f, V, L, opts: solve_monotone(
        tree, xi, f, V, L, opts.get("ladder"), opts.get("tol", DEFAULT_TOL),
        opts.get("floor"), opts.get("inner_ladder"), opts.get("max_iter", DEFAULT_MAX_ITER)),
}


def solve_lower(tree, xi, f, V=None, L=None, scheme="direct", **opts):
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown one-barrier scheme {scheme!r}")
    return SCHEMES[scheme](tree, xi, f, V, L, opts)


def solve_upper(tree, xi, f, V=None, U=None, scheme="direct", **opts):
    """Upper-barrier problem through (-xi, -f(t, -y), -V, -U)."""
    x = terminal_array(tree, xi)
    g = Mirrored(f)
    negV = None if V is None else -V
    negU = None if U is None else -U
    if scheme == "linear":
        sol = solve_linear(tree, -x, g, negV, negU)
    else:
        sol = solve_lower(tree, -x, g, negV, negU, scheme, **opts)
    Y = -sol.Y
    return assemble(tree, Y, -sol.fY, V, sol.scheme, sol.log)


# ---------------------------------------------------------------- diagnostics
def representation_check(tree, sol, f, xi, L, V=None, max_rules=10**7):
    """Largest gap between Y and the two optimal-stopping representations.

    The nonlinear form takes the supremum over system rules of the stopped
    equation with generator f; the frozen form uses the linear equation
    with drift f(t, Y(t+)).  Both are evaluated from every node, at the
    instant and at the right limit.
    """
    x = terminal_array(tree, xi)
    pay_i = np.where(tree.at_T, x, L.inst)
    pay_p = L.plus
    frozen = NodeDrift(sol.fY)
    gaps = {"nonlinear": 0.0, "frozen": 0.0}
    for v in np.flatnonzero(tree.live):
        for plus in (False, True):
            if plus and tree.level[v] == tree.N:
                continue
            codes = rule_codes(tree, "system", max_rules, root=v, phase_plus=plus)
            target = sol.Y.plus[v] if plus else sol.Y.inst[v]
            for name, g in (("nonlinear", f), ("frozen", frozen)):
                yi, yp = rule_sweep(tree, g, codes, pay_i, pay_p, V)
                best = (yp if plus else yi)[:, v].max()
                gaps[name] = max(gaps[name], abs(best - target))
    gaps["max"] = max(gaps["nonlinear"], gaps["frozen"])
    return gaps


def apriori_diagnostics(tree, sol, f, xi, V=None, L=None, X=None):
    """Martingale-representation identity and the size of the a priori estimate.

    The identity checked is ``M_t = E[xi + A_T | F_t] - Y_0`` where
    ``A`` accumulates the generator along Y, the driving process V and
    the reflection.  ``X`` is a majorant certificate (X >= L); its
    predictable part enters the reported right-hand side.
    """
    x = terminal_array(tree, xi)
    A = accumulated(tree, sol.fY, V) + sol.R
    total = np.where(tree.at_T, x + A.inst, 0.0)
    for v in np.flatnonzero(tree.after_T):
        total[v] = total[tree.parent[v]]
    cond = total.copy()
    for t in range(tree.N - 1, -1, -1):
        sl = tree.level_slice(t)
        e = tree.expect_level(cond[tree.level_slice(t + 1)], t)
        cond[sl] = np.where(tree.live[sl], e, cond[sl])
    y0 = sol.Y.inst[0]
    mask = ~tree.after_T
    resid = float(np.max(np.abs((cond - y0 - sol.M.inst)[mask])))
    resid = max(resid, float(np.max(np.abs((cond - y0 - sol.M.plus)[mask]))))
    out = {
        "identity_residual": resid,
        "generator_cost": float(np.dot(tree.path_prob, tree.h * np.abs(sol.fY) * tree.live)),
        "reflection_total": tree.expect_root(sol.R.inst),
    }
    if X is not None:
        if L is not None and not L.le(X, mask=tree.live):
            raise ValidationError("certificate X must dominate the lower barrier")
        dH, a = doob_parts(tree, X)
        C = FVProcess.from_increments(tree, -a, np.where(tree.live, X.plus - X.inst, 0.0))
        fx = _eval_f(tree, f, X)
        _, vr = v_parts(tree, V)
        Vtv = 0.0 if V is None else tree.expect_root(FVProcess(tree, V.inst, V.plus).total_variation().inst)
        out["certificate"] = {
            "norm_X": class_d_norm(tree, X),
            "variation_C": tree.expect_root(C.total_variation().inst),
            "negative_part_f_X": float(np.dot(tree.path_prob, tree.h * np.maximum(-fx, 0) * tree.live)),
        }
        out["rhs_aggregate"] = (out["certificate"]["norm_X"] + out["certificate"]["variation_C"]
                                + out["certificate"]["negative_part_f_X"] + Vtv
                                + tree.expect_root(np.abs(x)))
    return out


def reflect_barrier_ladder(tree, L, chain):
    """Barriers equal to L before each chain time and to -Snell(-L) from it on.

    ``-Snell(-L)`` lies below L, so the barriers increase with the chain
    index; the last chain time is T, where the barrier is L itself.
    """
    neg = snell_envelope(tree, -L, -L.inst).Y
    low = -neg
    out = []
    for rule in chain.rules:
        before = rule.codes == -1
        out.append(LatticeProcess(tree, np.where(before, L.inst, low.inst),
                                  np.where(before, L.plus, low.plus)))
    return out
