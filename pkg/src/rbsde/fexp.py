"""Unreflected BSDE sweeps, the nonlinear f-expectation, and solution assembly.

The generator accrues over the open period after each right limit: the
value at ``t+`` solves ``y = E[Y_{t+1} + dV* | F_t] + h*f(t, y)`` (one
backward Euler step), and the instant value adds the right jump of V.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ValidationError
from .filtration import CONTINUE, PASSED, STOP, STOP_PLUS, StoppingRule, stop_slots
from .processes import FVProcess, LatticeProcess, jordan, martingale_from_increments

STEP_TOL = 1e-12
MAX_BISECT = 200
MAX_BRACKET = 1e9


def implicit_step(target, t, h, f, nodes=None):
    """Root of ``y - h*f(t, y) = target`` (vectorized over ``target``).

    Uses the generator's closed form when it has one, otherwise Illinois
    false position on the bracket ``[target - B, target + B]`` with B doubling from 1.
    """
    target = np.asarray(target, dtype=float)
    if np.all(np.asarray(h) == 0):
        return target.copy()
    closed = f.solve_step(nodes, t, h, target)
    if closed is not None:
        return np.broadcast_to(np.asarray(closed, dtype=float), target.shape).copy()

    def g(y):
        return y - h * f.at(nodes, t, y) - target

    B = np.ones_like(target)
    while True:
        lo, hi = target - B, target + B
        bad = (g(lo) > 0) | (g(hi) < 0)
        if not np.any(bad):
            break
        if np.max(B[bad]) > MAX_BRACKET:
            raise ConvergenceError("unbounded generator step")
        B = np.where(bad, 2.0 * B, B)
    # Illinois false position on the bracket; g is increasing with slope >= 1
    glo, ghi = g(lo), g(hi)
    side = np.zeros(target.shape, dtype=np.int8)
    ulp = 4 * np.finfo(float).eps
    for _ in range(MAX_BISECT):
        done = (hi - lo <= ulp * np.maximum(1.0, np.abs(lo))) | (glo == 0) | (ghi == 0)
        if np.all(done):
            break
        denom = ghi - glo
        mid = 0.5 * (lo + hi)
        x = np.where(denom > 0, lo - glo * (hi - lo) / np.where(denom > 0, denom, 1.0), mid)
        x = np.where((x > lo) & (x < hi), x, mid)
        gx = g(x)
        left = gx <= 0
        act = ~done
        # halve the stale end's value when the same end moves twice
        nglo = np.where(left, gx, np.where(side == -1, 0.5 * glo, glo))
        nghi = np.where(left, np.where(side == 1, 0.5 * ghi, ghi), gx)
        glo = np.where(act, nglo, glo)
        ghi = np.where(act, nghi, ghi)
        lo = np.where(act & left, x, lo)
        hi = np.where(act & ~left, x, hi)
        side = np.where(act, np.where(left, 1, -1), side).astype(np.int8)
    glo, ghi = np.abs(g(lo)), np.abs(g(hi))
    return np.where(glo <= ghi, lo, hi)


def v_parts(tree, V):
    """Period increments and right jumps of V, zero from the terminal time on."""
    if V is None:
        return np.zeros(tree.n), np.zeros(tree.n)
    V = V if isinstance(V, FVProcess) else FVProcess(tree, V.inst, V.plus)
    star = np.where(tree.after_T, 0.0, V.star)
    right = np.where(tree.live, V.right, 0.0)
    return star, right


def terminal_array(tree, xi):
    """Per-node array holding xi at terminal nodes (scalars broadcast)."""
    out = np.zeros(tree.n)
    x = np.asarray(xi, dtype=float)
    if x.ndim == 0:
        out[:] = x
    elif x.shape == (tree.n,):
        out[:] = x
    elif x.shape == (int(tree.at_T.sum()),):
        out[tree.at_T] = x
    else:
        raise ValidationError("terminal values must be given per node or per terminal node")
    return out


@dataclass
class Solution:
    """(Y, M, R) with the reflection split into R+ (lower) and R- (upper)."""

    Y: LatticeProcess
    M: LatticeProcess
    R: FVProcess
    Rp: FVProcess
    Rm: FVProcess
    fY: np.ndarray
    scheme: str = "bsde"
    log: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    components: tuple = ()

    @property
    def K(self):
        return self.Rp

    @property
    def y0(self):
        return float(self.Y.inst[0])


def sweep(tree, xi, f, V=None, lower=None, upper=None):
    """Backward sweep with optional slotwise clamping between barriers.

    Returns (Y, fY) where fY holds f(t, Y(t+)) at live nodes.
    """
    xi = terminal_array(tree, xi)
    vstar, vright = v_parts(tree, V)
    yi = np.zeros(tree.n)
    yp = np.zeros(tree.n)
    fy = np.zeros(tree.n)
    yi[tree.at_T] = xi[tree.at_T]
    for v in np.flatnonzero(tree.after_T):
        yi[v] = yi[tree.parent[v]]
    yp[tree.stopped] = yi[tree.stopped]
    h = tree.h
    for t in range(tree.N - 1, -1, -1):
        sl = tree.level_slice(t)
        live = tree.live[sl]
        if not np.any(live):
            continue
        idx = np.arange(sl.start, sl.stop)[live]
        nxt = tree.level_slice(t + 1)
        c = tree.expect_level(yi[nxt] + vstar[nxt], t)[live]
        y = implicit_step(c, t * h, h, f, idx)
        if lower is not None:
            y = np.maximum(y, lower.plus[idx])
        if upper is not None:
            y = np.minimum(y, upper.plus[idx])
        fy[idx] = f.at(idx, t * h, y)
        yp[idx] = y
        y = y + vright[idx]
        if lower is not None:
            y = np.maximum(y, lower.inst[idx])
        if upper is not None:
            y = np.minimum(y, upper.inst[idx])
        yi[idx] = y
    return LatticeProcess(tree, yi, yp), fy


def assemble(tree, Y, fY, V=None, scheme="bsde", log=None):
    """Martingale part and net reflection implied by Y and f(t, Y(t+))."""
    vstar, vright = v_parts(tree, V)
    dM = np.zeros(tree.n)
    rstar = np.zeros(tree.n)
    for t in range(tree.N):
        sl = tree.level_slice(t)
        nxt = tree.level_slice(t + 1)
        x = Y.inst[nxt] + vstar[nxt]
        c = tree.expect_level(x, t)
        livec = tree.expand_level(tree.live[sl], t)
        dM[nxt] = np.where(livec, x - tree.expand_level(c, t), 0.0)
        drift = Y.plus[sl] - tree.h * fY[sl] - c
        rstar[nxt] = np.where(livec, tree.expand_level(drift, t), 0.0)
    rright = np.where(tree.live, Y.inst - Y.plus - vright, 0.0)
    R = FVProcess.from_increments(tree, rstar, rright)
    Rp, Rm = jordan(R)
    M = martingale_from_increments(tree, dM)
    return Solution(Y, M, R, Rp, Rm, np.where(tree.live, fY, 0.0), scheme, list(log or []))


def dynamics_residual(tree, sol, xi, V=None):
    """Largest slotwise mismatch when Y is rebuilt forward from (Y_0, f, V, R, M)."""
    vstar, vright = v_parts(tree, V)
    Y = sol.Y
    worst = 0.0
    live = tree.live
    plus_rec = Y.inst - vright - sol.R.right
    worst = max(worst, float(np.max(np.abs(np.where(live, plus_rec - Y.plus, 0.0)))))
    par = tree.parent[1:]
    rec = (Y.plus[par] - tree.h * sol.fY[par] - vstar[1:] - sol.R.star[1:]
           + (sol.M.inst[1:] - sol.M.inst[par]))
    err = np.where(live[par], np.abs(rec - Y.inst[1:]), 0.0)
    worst = max(worst, float(err.max(initial=0.0)))
    x = terminal_array(tree, xi)
    worst = max(worst, float(np.max(np.abs(Y.inst[tree.at_T] - x[tree.at_T]), initial=0.0)))
    return worst


def solve_bsde(tree, xi, f, V=None):
    """Backward Euler sweep without reflection."""
    Y, fY = sweep(tree, xi, f, V)
    sol = assemble(tree, Y, fY, V, "bsde")
    sol.diagnostics["generator_cost"] = generator_cost(tree, sol)
    return sol


def generator_cost(tree, sol):
    """E sum h|f(t, Y(t+))| over the live periods."""
    return float(np.dot(tree.path_prob, np.where(tree.live, tree.h * np.abs(sol.fY), 0.0)))


# ---------------------------------------------------------------- f-expectation
def rule_sweep(tree, f, codes, pay_inst, pay_plus, V=None, weights=None):
    """Values of the stopped equation for a batch of rules.

    ``codes`` has shape (R, n).  At a node stopped at the instant the value
    is ``pay_inst``; stopped at the right limit the right-limit value is
    ``pay_plus`` and the instant adds the right jump of V.  Continuation
    nodes take one implicit step.  ``pay_*`` may be (n,) or (R, n).
    Returns the instant and right-limit values, shape (R, n); nodes not
    reached hold 0.
    """
    codes = np.atleast_2d(codes)
    R = codes.shape[0]
    vstar, vright = v_parts(tree, V)
    pi = np.broadcast_to(np.asarray(pay_inst, dtype=float), (R, tree.n))
    pp = np.broadcast_to(np.asarray(pay_plus, dtype=float), (R, tree.n))
    gen = f if weights is None else _masked(f, weights)
    yi = np.zeros((R, tree.n))
    yp = np.zeros((R, tree.n))
    h = tree.h
    for t in range(tree.N, -1, -1):
        sl = tree.level_slice(t)
        cd = codes[:, sl]
        idx = np.arange(sl.start, sl.stop)
        if t < tree.N:
            nxt = tree.level_slice(t + 1)
            c = tree.expect_level(yi[:, nxt] + vstar[nxt], t)
            cont = cd == CONTINUE
            step = np.zeros_like(c)
            if np.any(cont):
                cols = np.flatnonzero(cont.any(axis=0))
                step[:, cols] = implicit_step(c[:, cols], t * h, h, gen, idx[cols])
        else:
            step = np.zeros((R, len(idx)))
        plus = np.where(cd == STOP_PLUS, pp[:, sl], np.where(cd == CONTINUE, step, pi[:, sl]))
        inst = np.where(cd == STOP, pi[:, sl], plus + vright[idx])
        unreached = cd == PASSED
        yp[:, sl] = np.where(unreached, 0.0, plus)
        yi[:, sl] = np.where(unreached, 0.0, inst)
    return yi, yp


def _masked(f, weights):
    from .generators import Masked
    return Masked(f, weights)


def stop_value(tree, codes, yi, yp):
    """Value at each rule's stopping slot, per node (NaN where not stopped there)."""
    out = np.full(yi.shape, np.nan)
    out = np.where(codes == STOP, yi, out)
    return np.where(codes == STOP_PLUS, yp, out)


def f_expectation(tree, alpha, beta, zeta, f):
    """E^f_{alpha,beta}(zeta): values at alpha's stopping nodes (NaN elsewhere).

    ``zeta`` is given per node and read at beta's stopping nodes.  The
    generator is switched off outside the window between alpha and beta.
    """
    if not alpha <= beta:
        raise ValidationError("f-expectation needs alpha <= beta on every path")
    z = np.asarray(zeta, dtype=float)
    if z.ndim == 0:
        z = np.full(tree.n, float(z))
    w = ((alpha.codes != CONTINUE) & (beta.codes == CONTINUE)).astype(float)
    yi, yp = rule_sweep(tree, f, beta.codes[None, :], z, z, weights=w)
    codes = alpha.codes
    vals = np.full(tree.n, np.nan)
    # alpha may stop at a node that beta has already passed; read back along the path
    slot_b = beta.slots()
    for v in alpha.stop_nodes:
        s_a = 2 * tree.level[v] + codes[v]
        if beta.codes[v] == PASSED or (beta.codes[v] in (STOP, STOP_PLUS) and slot_b[v] <= s_a):
            vals[v] = _zeta_at_beta(tree, beta, z, v)
        else:
            vals[v] = yi[0, v] if codes[v] == STOP else yp[0, v]
    return vals


def _zeta_at_beta(tree, beta, z, v):
    while beta.codes[v] == PASSED:
        v = tree.parent[v]
    return z[v]


# ---------------------------------------------------------------- dominating process
def tail_expectation(tree, per_node):
    """E[sum over live periods from the current node on | F_t], as a per-node array."""
    acc = np.where(tree.live, np.asarray(per_node, dtype=float), 0.0)
    out = acc.copy()
    for t in range(tree.N - 1, -1, -1):
        sl = tree.level_slice(t)
        out[sl] += tree.expect_level(out[tree.level_slice(t + 1)], t)
    return out


def abs_snell(tree, X):
    """Snell envelope over all slots of |X| (instant and right-limit arrays)."""
    inst = np.abs(X.inst)
    plus = np.abs(X.plus)
    Si = inst.copy()
    Sp = plus.copy()
    for t in range(tree.N - 1, -1, -1):
        sl = tree.level_slice(t)
        live = tree.live[sl]
        e = tree.expect_level(Si[tree.level_slice(t + 1)], t)
        sp = np.maximum(plus[sl], e)
        si = np.maximum(inst[sl], sp)
        Sp[sl] = np.where(live, sp, inst[sl])
        Si[sl] = np.where(live, si, inst[sl])
    return Si, Sp


def dominating_supermartingale(tree, X, f):
    """2 * Snell(|X|) + 2 * E[sum h|f(r, 0)| | F]: dominates every |E^f_{alpha,tau}(X_tau)|."""
    Si, Sp = abs_snell(tree, X)
    f0 = np.zeros(tree.n)
    for t in range(tree.N):
        idx = tree.level_nodes(t)
        f0[idx] = tree.h * np.abs(f.at(idx, t * tree.h, np.zeros(len(idx))))
    tail = tail_expectation(tree, f0)
    return LatticeProcess(tree, 2 * Si + 2 * tail, 2 * Sp + 2 * tail)


def integrability_bound(tree, sol, f, xi):
    """Both sides of the generator-integrability estimate at every node.

    Returns a dict of per-node arrays: ``lhs`` = E[sum h|f(r, Y_r)| | F_t],
    ``rhs_stated`` = 2 E[|xi| - |Y_t| + sum h|f(r, 0)| | F_t], and
    ``rhs_sharp`` = E[|xi| | F_t] - |Y_t| + 2 E[sum h|f(r, 0)| | F_t],
    which follows from the sign-splitting argument.  Only nodes before
    the terminal time are compared.
    """
    x = terminal_array(tree, xi)
    f0 = np.zeros(tree.n)
    for t in range(tree.N):
        idx = tree.level_nodes(t)
        f0[idx] = tree.h * np.abs(f.at(idx, t * tree.h, np.zeros(len(idx))))
    lhs = tail_expectation(tree, tree.h * np.abs(sol.fY))
    c0 = tail_expectation(tree, f0)
    exi = np.where(tree.at_T, np.abs(x), 0.0)
    for t in range(tree.N - 1, -1, -1):
        sl = tree.level_slice(t)
        e = tree.expect_level(exi[tree.level_slice(t + 1)], t)
        exi[sl] = np.where(tree.live[sl], e, exi[sl])
    absy = np.abs(sol.Y.inst)
    return {
        "lhs": lhs,
        "rhs_stated": 2.0 * (exi - absy + c0),
        "rhs_sharp": exi - absy + 2.0 * c0,
        "nodes": np.flatnonzero(tree.live),
    }

