"""Two-barrier reflected BSDEs: decoupling iteration, clamped sweep, f_{n,m} ladder."""
from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceError, InvariantError, SeparationError, ValidationError
from .fexp import assemble, solve_bsde, sweep, terminal_array
from .filtration import class_d_norm
from .generators import Fnm, Shifted, zero
from .lower import _eval_f, solve_lower
from .processes import LatticeProcess

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10000
MONO_TOL = 1e-9


def check_separation(tree, L, U, xi):
    """L <= U on every slot before T and L_T <= xi <= U_T at terminal nodes.

    Returns the smallest gap U - L over live slots.  On a finite tree any
    adapted process between the barriers is a special semimartingale, so
    this is the whole separation requirement.
    """
    x = terminal_array(tree, xi)
    live = tree.live
    has_plus = live & (tree.level < tree.N)
    gi = np.where(live, U.inst - L.inst, np.inf)
    gp = np.where(has_plus, U.plus - L.plus, np.inf)
    for arr, phase in ((gi, ""), (gp, "+")):
        if np.any(arr < 0):
            v = int(np.argmin(arr))
            raise SeparationError(f"separation violation: L exceeds U by {-arr[v]:.6g} at node {v}, "
                                  f"slot {tree.level[v]}{phase}", -float(arr[v]), v,
                                  f"{tree.level[v]}{phase}")
    T = tree.at_T
    lo = np.where(T, x - L.inst, np.inf)
    hi = np.where(T, U.inst - x, np.inf)
    for arr, side in ((lo, "below L"), (hi, "above U")):
        if np.any(arr < 0):
            v = int(np.argmin(arr))
            raise SeparationError(f"separation violation: terminal value {side} by {-arr[v]:.6g} "
                                  f"at node {v}", -float(arr[v]), v, f"{tree.level[v]}")
    return True, float(min(gi.min(), gp.min()))


def solve_direct(tree, xi, f, V=None, L=None, U=None):
    """Single backward sweep clamping each slot into [L, U]."""
    if L is not None and U is not None:
        check_separation(tree, L, U, xi)
    Y, fY = sweep(tree, xi, f, V, lower=L, upper=U)
    return assemble(tree, Y, fY, V, "direct")


def solve_decoupled(tree, xi, f, V=None, L=None, U=None, tol=DEFAULT_TOL,
                    max_iter=DEFAULT_MAX_ITER, inner="direct", inner_opts=None):
    """Two coupled lower-barrier problems whose difference solves the double problem.

    Y1 solves the lower problem with generator f(t, y - Y2), driving V and
    barrier L + Y2; Y2 solves the lower problem with zero data and barrier
    Y1 - U.  Both sequences increase from (unreflected solution, 0).
    """
    check_separation(tree, L, U, xi)
    inner_opts = dict(inner_opts or {})
    x = terminal_array(tree, xi)
    Y1 = solve_bsde(tree, x, f, V).Y
    Y2 = LatticeProcess.zeros(tree)
    zero_f = zero()
    log = []
    s1 = s2 = None
    for it in range(1, max_iter + 1):
        s1 = solve_lower(tree, x, Shifted(f, Y2.plus), V, L + Y2, inner, **inner_opts)
        s2 = solve_lower(tree, 0.0, zero_f, None, Y1 - U, inner, **inner_opts)
        n1, n2 = s1.Y, s2.Y
        if not (Y1.le(n1, tol=MONO_TOL) and Y2.le(n2, tol=MONO_TOL)):
            raise InvariantError(f"decoupling iterates decreased at step {it}")
        d1 = class_d_norm(tree, n1 - Y1)
        d2 = class_d_norm(tree, n2 - Y2)
        log.append({"iter": it, "gap1": d1, "gap2": d2, "y0": float(n1.inst[0] - n2.inst[0])})
        Y1, Y2 = n1, n2
        if d1 <= tol and d2 <= tol:
            break
    else:
        raise ConvergenceError(f"decoupling iteration did not settle in {max_iter} steps", log)
    Y = Y1 - Y2
    sol = assemble(tree, Y, _eval_f(tree, f, Y), V, "decoupled", log)
    diff = (s1.R - s2.R) - sol.R
    sol.components = (s1, s2)
    sol.diagnostics["component_split_gap"] = float(max(np.abs(diff.inst).max(), np.abs(diff.plus).max()))
    sol.diagnostics["iterations"] = len(log)
    return sol


def solve_fnm(tree, xi, f, V=None, L=None, U=None, ladder=(1, 2, 4, 8), rho=None,
              inner="decoupled", tol=DEFAULT_TOL):
    """Solutions for the truncated generators f_{n,m} over a square ladder.

    Returns the solution for the last (n, m); the log records the root
    value for every rung.
    """
    solver = {"decoupled": solve_decoupled, "direct": solve_direct}[inner]
    log = []
    sol = None
    for n in ladder:
        for m in ladder:
            g = Fnm(f, n, m, rho)
            if inner == "decoupled":
                sol = solver(tree, xi, g, V, L, U, tol=tol)
            else:
                sol = solver(tree, xi, g, V, L, U)
            log.append({"n": n, "m": m, "y0": sol.y0})
    sol.scheme = "fnm"
    sol.log = log
    sol.diagnostics["ladder_y0"] = [r["y0"] for r in log]
    return sol


def scaled_rho(scale=1.0):
    def rho(t):
        return scale * math.exp(-t)
    return rho


SCHEMES = ("decoupled", "direct", "fnm")


def solve_double(tree, xi, f, V=None, L=None, U=None, scheme="decoupled", **opts):
    if scheme == "decoupled":
        return solve_decoupled(tree, xi, f, V, L, U, opts.get("tol", DEFAULT_TOL),
                               opts.get("max_iter", DEFAULT_MAX_ITER), opts.get("inner", "direct"),
                               opts.get("inner_opts"))
    if scheme == "direct":
        return solve_direct(tree, xi, f, V, L, U)
    if scheme == "fnm":
        return solve_fnm(tree, xi, f, V, L, U, opts.get("ladder") or (1, 2, 4, 8),
                         scaled_rho(opts.get("rho_scale", 1.0)), opts.get("inner", "decoupled"),
                         opts.get("tol", DEFAULT_TOL))
    raise ValidationError(f"unknown two-barrier scheme {scheme!r}")
