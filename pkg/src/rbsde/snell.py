"""Snell envelopes on the doubled grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .filtration import CONTINUE, STOP, STOP_PLUS, StoppingRule, rule_codes
from .processes import FVProcess, LatticeProcess, check_supermartingale, mertens_decompose

TOL = 1e-10


@dataclass
class SnellResult:
    Y: LatticeProcess
    M: LatticeProcess
    K: FVProcess
    system_rule: StoppingRule
    plain_rule: StoppingRule
    plain_value: float

    @property
    def value(self):
        return float(self.Y.inst[0])


def envelope_arrays(tree, payoff, terminal, kind="system"):
    """Backward recursion for the envelope; returns (inst, plus) arrays."""
    term = np.zeros(tree.n)
    x = np.asarray(terminal, dtype=float)
    if x.ndim == 0:
        term[:] = x
    elif x.shape == (tree.n,):
        term[:] = x
    else:
        term[tree.at_T] = x
    yi = np.where(tree.at_T, term, 0.0)
    for v in np.flatnonzero(tree.after_T):
        yi[v] = yi[tree.parent[v]]
    yp = yi.copy()
    for t in range(tree.N - 1, -1, -1):
        sl = tree.level_slice(t)
        live = tree.live[sl]
        e = tree.expect_level(yi[tree.level_slice(t + 1)], t)
        p = np.maximum(payoff.plus[sl], e) if kind == "system" else e
        yp[sl] = np.where(live, p, yp[sl])
        yi[sl] = np.where(live, np.maximum(payoff.inst[sl], p), yi[sl])
    return yi, yp


def snell_envelope(tree, payoff, terminal):
    """Smallest supermartingale above the payoff, with terminal value at T."""
    yi, yp = envelope_arrays(tree, payoff, terminal)
    Y = LatticeProcess(tree, yi, yp)
    M, K = mertens_decompose(tree, Y)
    hit_i = np.isclose(yi, payoff.inst, rtol=0, atol=TOL) & tree.live
    hit_p = np.isclose(yp, payoff.plus, rtol=0, atol=TOL) & tree.live & (tree.level < tree.N)
    sys_rule = StoppingRule.first_hit(tree, hit_i, hit_p, "system")
    pi, _ = envelope_arrays(tree, payoff, terminal, kind="plain")
    plain_hit = np.isclose(pi, payoff.inst, rtol=0, atol=TOL) & tree.live
    plain_rule = StoppingRule.first_hit(tree, plain_hit, np.zeros(tree.n, bool), "plain")
    return SnellResult(Y, M, K, sys_rule, plain_rule, float(pi[0]))


def flat_off_residual(tree, Y, payoff, K):
    """Largest |(Y - payoff)*dK| over both reflection channels."""
    par = tree.parent[1:]
    live = tree.live
    a = np.where(live[par], (Y.plus[par] - payoff.plus[par]) * K.star[1:], 0.0)
    b = np.where(live, (Y.inst - payoff.inst) * K.right, 0.0)
    return float(max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0)))


def slot_matrix(tree, codes):
    """Stopping slot along each node's path for a batch of rules (-1 if undecided)."""
    codes = np.atleast_2d(codes)
    S = np.full(codes.shape, -1, dtype=np.int64)
    for t in range(tree.N + 1):
        sl = tree.level_slice(t)
        cd = codes[:, sl]
        own = np.where((cd == STOP) | (cd == STOP_PLUS), 2 * t + cd, -1)
        if t > 0:
            inh = S[:, tree.parent[sl]]
            own = np.where(cd == 2, inh, own)
        S[:, sl] = own
    return S


def linear_rule_values(tree, codes, pay_inst, pay_plus):
    """E[payoff at tau] for each rule (no generator), computed on the leaves."""
    codes = np.atleast_2d(codes)
    S = slot_matrix(tree, codes)
    lv = tree.leaves
    # stopping node of each leaf: ancestor at the stop level
    vals = np.zeros((codes.shape[0], len(lv)))
    anc = [tree.ancestors_at(t) for t in range(tree.N + 1)]
    slots = S[:, lv]
    for t in range(tree.N + 1):
        a = anc[t][lv]
        vals = np.where(slots == 2 * t, pay_inst[a], vals)
        vals = np.where(slots == 2 * t + 1, pay_plus[a], vals)
    return vals @ tree.path_prob[lv]


def localized_representation_check(tree, payoff, snell, sigma, max_rules=10**7):
    """Check Y_0 = sup over tau <= sigma of E[L_tau 1{tau<sigma} + Y_sigma 1{tau=sigma}]."""
    if sigma.kind != "plain":
        raise ValidationError("sigma must be a plain stopping rule")
    codes = rule_codes(tree, "system", max_rules)
    S = slot_matrix(tree, codes)
    ss = sigma.slots()
    lv = tree.leaves
    ok = np.all(S[:, lv] <= ss[lv], axis=1)
    Y = snell.Y
    pay_i = np.where(sigma.codes == STOP, Y.inst, payoff.inst)
    pay_i = np.where(tree.at_T, Y.inst, pay_i)
    vals = linear_rule_values(tree, codes[ok], pay_i, payoff.plus)
    best = float(vals.max())
    return abs(best - Y.inst[0]) <= TOL, abs(best - Y.inst[0])


def smallest_majorant_check(tree, payoff, Y, candidates, tol=TOL):
    """True iff the envelope lies below every admissible candidate."""
    for i, c in enumerate(candidates):
        ok, worst, where = check_supermartingale(tree, c, tol)
        if not ok:
            raise ValidationError(f"candidate {i} is not a supermartingale (violation {worst:.3g} at {where})")
        if not payoff.le(c, tol=tol, mask=tree.live):
            raise ValidationError(f"candidate {i} does not dominate the payoff")
    return all(Y.le(c, tol=tol) for c in candidates)
