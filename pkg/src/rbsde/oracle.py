"""Brute-force references: optimal stopping and Dynkin games by enumeration.

Pairs of rules are evaluated with one vectorized backward sweep per
chunk.  Ties between the players are decided by slot: the earlier slot
wins and, on the same slot, the maximizer's barrier L is paid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetError
from .fexp import implicit_step, rule_sweep, terminal_array, v_parts
from .filtration import (CONTINUE, DEFAULT_MAX_PAIRS, DEFAULT_MAX_RULES, PASSED, STOP, STOP_PLUS,
                         StoppingRule, count_rules, rule_codes)
from .processes import LatticeProcess
from .snell import envelope_arrays

CHUNK_CELLS = 2_000_000


@dataclass(frozen=True)
class OracleBudget:
    max_rules: int = DEFAULT_MAX_RULES
    max_pairs: int = DEFAULT_MAX_PAIRS
    seconds: float = 600.0

    def __post_init__(self):
        if self.max_rules <= 0 or self.max_pairs <= 0 or self.seconds <= 0:
            raise ValueError("oracle budgets must be positive")

    def check_rules(self, tree, kind):
        c = count_rules(tree, kind)
        if c > self.max_rules:
            raise BudgetError(f"oracle size limit: {c} {kind} rules exceed the cap {self.max_rules}",
                              c, self.max_rules)
        return c

    def check_pairs(self, tree, kind_a, kind_b):
        a = self.check_rules(tree, kind_a)
        b = self.check_rules(tree, kind_b)
        if a * b > self.max_pairs:
            raise BudgetError(f"oracle size limit: {a * b} rule pairs exceed the cap {self.max_pairs}",
                              a * b, self.max_pairs)
        return a * b


def oracle_optimal_stopping(tree, payoff, terminal, f, kind="system", V=None, budget=None):
    """max over rules of E^f_{0,tau}(payoff_tau 1{tau<T} + xi 1{tau=T}).

    Returns (value, rule); ties go to the earliest rule in canonical order.
    """
    budget = budget or OracleBudget()
    budget.check_rules(tree, kind)
    codes = rule_codes(tree, kind, budget.max_rules)
    x = terminal_array(tree, terminal)
    pay_i = np.where(tree.at_T, x, payoff.inst)
    yi, _ = rule_sweep(tree, f, codes, pay_i, payoff.plus, V)
    vals = yi[:, 0]
    k = int(np.argmax(vals))
    return float(vals[k]), StoppingRule(tree, codes[k], kind)


def pair_values(tree, f, xi, L, U, codes_a, codes_b, V=None, f_alt=None):
    """Game payoff at the root for every pair of maximizer/minimizer rules.

    Returns an (A, B) array.  With ``f_alt`` given, also returns the
    expected generator gap ``E sum h|f - f_alt|`` along each pair's
    trajectory up to the game's end.
    """
    codes_a = np.atleast_2d(codes_a)
    codes_b = np.atleast_2d(codes_b)
    A, B = len(codes_a), len(codes_b)
    width = max(int(np.diff(tree.starts).max()), 1)
    chunk = max(1, CHUNK_CELLS // max(1, B * width))
    out = np.empty((A, B))
    gap = np.empty((A, B)) if f_alt is not None else None
    for s in range(0, A, chunk):
        res = _pair_chunk(tree, f, xi, L, U, codes_a[s:s + chunk], codes_b, V, f_alt)
        out[s:s + chunk] = res[0]
        if gap is not None:
            gap[s:s + chunk] = res[1]
    return (out, gap) if f_alt is not None else out


def _pair_chunk(tree, f, xi, L, U, ca, cb, V, f_alt):
    x = terminal_array(tree, xi)
    vstar, vright = v_parts(tree, V)
    h = tree.h
    a, b = len(ca), len(cb)
    nxt_inst = None
    nxt_cost = None
    for t in range(tree.N, -1, -1):
        sl = tree.level_slice(t)
        idx = np.arange(sl.start, sl.stop)
        r = ca[:, None, sl]
        d = cb[None, :, sl]
        shape = (a, b, len(idx))
        both_cont = (r == CONTINUE) & (d == CONTINUE)
        if t < tree.N:
            c = tree.expect_level(nxt_inst + vstar[tree.level_slice(t + 1)], t)
            step = np.zeros(shape)
            cost = np.zeros(shape)
            if f_alt is not None:
                ec = tree.expect_level(nxt_cost, t)
            for j in np.flatnonzero(both_cont.any(axis=(0, 1))):
                mask = both_cont[..., j]
                u, inv = np.unique(c[..., j][mask], return_inverse=True)
                node = np.full(len(u), idx[j])
                yu = implicit_step(u, t * h, h, f, node)
                step[..., j][mask] = yu[inv]
                if f_alt is not None:
                    gu = h * np.abs(f.at(node, t * h, yu) - f_alt.at(node, t * h, yu))
                    cost[..., j][mask] = gu[inv] + ec[..., j][mask]
        else:
            step = np.zeros(shape)
            cost = np.zeros(shape)
        Li, Lp, Ui, Up, vr = L.inst[idx], L.plus[idx], U.inst[idx], U.plus[idx], vright[idx]
        val = np.where(r == STOP, Li,
              np.where(d == STOP, Ui,
              np.where(r == STOP_PLUS, Lp + vr,
              np.where(d == STOP_PLUS, Up + vr, step + vr))))
        val = np.where(tree.at_T[idx], x[idx], val)
        reached = (r != PASSED) & (d != PASSED)
        nxt_inst = np.where(reached, val, 0.0)
        nxt_cost = np.where(reached, cost, 0.0)
    return nxt_inst[:, :, 0], nxt_cost[:, :, 0]


def oracle_game(tree, xi, f, L, U, V=None, kind_a="system", kind_b="system", budget=None):
    """sup-inf and inf-sup of the game payoff over rule pairs.

    Returns a dict with both values, the optimal pair (by canonical order)
    and the full payoff matrix.
    """
    budget = budget or OracleBudget()
    budget.check_pairs(tree, kind_a, kind_b)
    ca = rule_codes(tree, kind_a, budget.max_rules)
    cb = ca if kind_b == kind_a else rule_codes(tree, kind_b, budget.max_rules)
    J = pair_values(tree, f, xi, L, U, ca, cb, V)
    row_min = J.min(axis=1)
    col_max = J.max(axis=0)
    i = int(np.argmax(row_min))
    j = int(np.argmin(col_max))
    return {
        "supinf": float(row_min[i]),
        "infsup": float(col_max[j]),
        "argmax": StoppingRule(tree, ca[i], kind_a),
        "argmin": StoppingRule(tree, cb[j], kind_b),
        "matrix": J,
        "codes_a": ca,
        "codes_b": cb,
    }


def random_supermartingale_above(tree, payoff, terminal, rng, scale=1.0):
    """Envelope of payoff plus nonnegative noise: a supermartingale above the payoff."""
    noise_i = rng.exponential(scale, tree.n) * (rng.random(tree.n) < 0.5)
    noise_p = rng.exponential(scale, tree.n) * (rng.random(tree.n) < 0.5)
    bumped = LatticeProcess(tree, payoff.inst + noise_i, payoff.plus + noise_p)
    term = terminal_array(tree, terminal) + np.where(rng.random(tree.n) < 0.5, noise_i, 0.0)
    yi, yp = envelope_arrays(tree, bumped, term)
    return LatticeProcess(tree, yi, yp)


def oracle_snell_smallest(tree, payoff, terminal, candidates=50, seed=0, tol=1e-10):
    """Falsification test: no sampled supermartingale above the payoff dips below the envelope.

    Returns (ok, smallest slack over all candidates and slots).
    """
    rng = np.random.default_rng(seed)
    yi, yp = envelope_arrays(tree, payoff, terminal)
    live = ~tree.after_T
    slack = np.inf
    for _ in range(candidates):
        c = random_supermartingale_above(tree, payoff, terminal, rng)
        s = min(float(np.min((c.inst - yi)[live])), float(np.min((c.plus - yp)[live])))
        slack = min(slack, s)
    return slack >= -tol, slack
