"""Finite event trees: conditional expectation, stopping rules, chains.

Nodes are stored in (level, id) order, which coincides with their dense
ids: node ``i`` of the tree is the ``i``-th node in that order.  A node
carries two time slots, the instant ``t`` and the right limit ``t+``;
slot indices are ``2*t`` and ``2*t + 1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ValidationError

CONTINUE = -1
STOP = 0
STOP_PLUS = 1
PASSED = 2

DEFAULT_MAX_RULES = 10**7
DEFAULT_MAX_PAIRS = 10**6
PROB_TOL = 1e-12


class FilteredTree:
    """Event tree with transition probabilities and a terminal stopping time.

    Parameters
    ----------
    parents : sequence of int
        Parent id per node, ``-1`` for the root.  Node ids must be dense
        and sorted by level.
    probs : sequence of float
        Probability of the move into each node from its parent (root: 1).
    step : float
        Time mesh ``h``.
    terminal : sequence of bool, optional
        Per-node flag "the terminal time is reached here".  The terminal
        time is the first flagged node on each path, and level ``N`` is
        always flagged.
    """

    def __init__(self, parents, probs, step=1.0, terminal=None):
        parents = np.asarray(parents, dtype=np.int64)
        probs = np.asarray(probs, dtype=float)
        n = len(parents)
        if n == 0 or probs.shape != (n,):
            raise ValidationError("parents and probs must be non-empty and of equal length")
        if not step > 0 or not math.isfinite(step):
            raise ValidationError("step must be a positive real")
        roots = np.flatnonzero(parents < 0)
        if len(roots) != 1 or roots[0] != 0:
            raise ValidationError("tree must have exactly one root, with id 0")
        level = np.zeros(n, dtype=np.int64)
        for v in range(1, n):
            p = parents[v]
            if not 0 <= p < v:
                raise ValidationError(f"node {v}: parent {p} must precede it")
            level[v] = level[p] + 1
        if np.any(np.diff(level) < 0):
            raise ValidationError("node ids must be ordered by level")
        self.n = n
        self.h = float(step)
        self.N = int(level[-1])
        if self.N < 1:
            raise ValidationError("tree needs at least one period")
        self.parent = parents
        self.level = level
        self.time = level * self.h

        counts = np.bincount(parents[1:], minlength=n)
        inner = np.flatnonzero(level < self.N)
        if np.any(counts[inner] == 0):
            bad = inner[counts[inner] == 0][0]
            raise ValidationError(f"node {bad} at level {level[bad]} < N has no children")
        if np.any(probs[1:] <= 0):
            bad = 1 + int(np.flatnonzero(probs[1:] <= 0)[0])
            raise ValidationError(f"node {bad}: branch probability must be strictly positive")
        sums = np.bincount(parents[1:], weights=probs[1:], minlength=n)
        if np.any(np.abs(sums[inner] - 1.0) > PROB_TOL):
            bad = inner[np.abs(sums[inner] - 1.0) > PROB_TOL][0]
            raise ValidationError(f"node {bad}: branch probabilities sum to {sums[bad]!r}, not 1")
        p = probs.copy()
        p[0] = 1.0
        p[1:] = p[1:] / sums[parents[1:]]
        self.prob = p

        self.starts = np.searchsorted(level, np.arange(self.N + 2))
        self.children = [[] for _ in range(n)]
        for v in range(1, n):
            self.children[parents[v]].append(v)
        self.branch = np.zeros(n, dtype=np.int64)
        for kids in self.children:
            for b, w in enumerate(kids):
                self.branch[w] = b

        # per level: children of level t grouped by parent, for reduceat
        self._perm = []
        self._offsets = []
        self._local_parent = []
        for t in range(self.N):
            lo, hi = self.starts[t + 1], self.starts[t + 2]
            par = parents[lo:hi] - self.starts[t]
            perm = np.argsort(par, kind="stable")
            self._perm.append(perm)
            self._offsets.append(np.searchsorted(par[perm], np.arange(self.starts[t + 1] - self.starts[t])))
            self._local_parent.append(par)

        # path probability and path labels
        self.path_prob = np.ones(n)
        self.ups = np.zeros(n, dtype=np.int64)
        self.branch_sum = np.zeros(n, dtype=np.int64)
        for v in range(1, n):
            q = parents[v]
            self.path_prob[v] = self.path_prob[q] * p[v]
            self.ups[v] = self.ups[q] + (self.branch[v] == 0)
            self.branch_sum[v] = self.branch_sum[q] + self.branch[v]
        self.set_terminal(terminal)

    # ------------------------------------------------------------ terminal
    def set_terminal(self, flags=None):
        flags = np.zeros(self.n, dtype=bool) if flags is None else np.asarray(flags, dtype=bool).copy()
        if flags.shape != (self.n,):
            raise ValidationError("terminal flags must be given per node")
        flags[self.level == self.N] = True
        at = np.zeros(self.n, dtype=bool)
        after = np.zeros(self.n, dtype=bool)
        for v in range(self.n):
            q = self.parent[v]
            if q >= 0 and (at[q] or after[q]):
                after[v] = True
            elif flags[v]:
                at[v] = True
        self.at_T = at
        self.after_T = after
        self.stopped = at | after
        self.live = ~self.stopped
        return self

    @property
    def terminal_nodes(self):
        return np.flatnonzero(self.at_T)

    @property
    def leaves(self):
        return np.arange(self.starts[self.N], self.n)

    # ------------------------------------------------------------ levels
    def level_nodes(self, t):
        return np.arange(self.starts[t], self.starts[t + 1])

    def level_slice(self, t):
        return slice(int(self.starts[t]), int(self.starts[t + 1]))

    def labels(self):
        """Per-node label arrays usable in expressions."""
        return {
            "t": self.level.astype(float),
            "time": self.time,
            "k": self.ups.astype(float),
            "j": self.branch_sum.astype(float),
            "id": np.arange(self.n, dtype=float),
            "N": np.full(self.n, float(self.N)),
            "h": np.full(self.n, self.h),
        }

    def expect_level(self, values, t):
        """E[X_{t+1} | F_t] for values given on level t+1 (last axis).

        Leading axes are treated as a batch.  Children are summed in
        child-id order.
        """
        values = np.asarray(values, dtype=float)
        sl = self.level_slice(t + 1)
        width = sl.stop - sl.start
        if values.shape[-1] != width:
            raise ValidationError(
                f"incomplete section: expected {width} values at level {t + 1}, got {values.shape[-1]}")
        w = values * self.prob[sl]
        perm = self._perm[t]
        return np.add.reduceat(w[..., perm], self._offsets[t], axis=-1)

    def expand_level(self, values, t):
        """Lift values on level t to level t+1 (children copy the parent value)."""
        return np.asarray(values)[..., self._local_parent[t]]

    def cond_expect(self, values, at):
        """Conditional expectation of a node-indexed section at level ``at + 1``.

        ``values`` may be a full per-node array or the level ``at + 1``
        section; a mapping node -> value is also accepted.
        """
        sl = self.level_slice(at + 1)
        if isinstance(values, dict):
            missing = [v for v in range(sl.start, sl.stop) if v not in values]
            if missing:
                raise ValidationError(f"incomplete section: no value for node {missing[0]}")
            values = [values[v] for v in range(sl.start, sl.stop)]
        values = np.asarray(values, dtype=float)
        if values.shape[-1] == self.n:
            values = values[..., sl]
        return self.expect_level(values, at)

    def expect_root(self, per_node):
        """E[X] for X given on the leaves (full per-node array)."""
        lv = self.leaves
        return float(np.dot(self.path_prob[lv], np.asarray(per_node, dtype=float)[lv]))

    def ancestors_at(self, t):
        """Array mapping every node of level >= t to its ancestor at level t (-1 above)."""
        out = np.full(self.n, -1, dtype=np.int64)
        sl = self.level_slice(t)
        out[sl] = np.arange(sl.start, sl.stop)
        for v in range(sl.stop, self.n):
            out[v] = out[self.parent[v]]
        return out

    def subtree(self, root):
        """Node ids of the subtree rooted at ``root`` in (level, id) order."""
        mask = np.zeros(self.n, dtype=bool)
        mask[root] = True
        for v in range(root + 1, self.n):
            if mask[self.parent[v]]:
                mask[v] = True
        return np.flatnonzero(mask)

    def describe(self):
        return {"nodes": int(self.n), "N": self.N, "h": self.h,
                "terminal_nodes": int(self.at_T.sum())}


def binomial_tree(N, h=1.0, p=0.5, terminal=None):
    """Full binary event tree with up-probability ``p`` (branch 0 is up)."""
    if int(N) != N or N < 1:
        raise ValidationError("binomial tree needs an integer N >= 1")
    if not 0 < p < 1:
        raise ValidationError("branch probability p must lie in (0, 1)")
    n = 2 ** (int(N) + 1) - 1
    ids = np.arange(n)
    parents = (ids - 1) // 2
    parents[0] = -1
    probs = np.where(ids % 2 == 1, p, 1.0 - p)
    probs[0] = 1.0
    return FilteredTree(parents, probs, h, terminal)


def explicit_tree(nodes, h=1.0, terminal=None):
    """Tree from records ``{"id", "parent", "prob"}``; ids are renumbered by (level, id)."""
    recs = {}
    for rec in nodes:
        i = int(rec["id"])
        if i in recs:
            raise ValidationError(f"duplicate node id {i}")
        recs[i] = rec
    if sorted(recs) != list(range(len(recs))):
        raise ValidationError("node ids must be dense integers 0..n-1")
    lev = {}

    def depth(i, seen=()):
        if i in lev:
            return lev[i]
        par = recs[i].get("parent")
        if par is None or par == -1:
            lev[i] = 0
        else:
            if par not in recs or i in seen:
                raise ValidationError(f"node {i}: bad parent {par}")
            lev[i] = depth(int(par), seen + (i,)) + 1
        return lev[i]

    for i in recs:
        depth(i)
    order = sorted(recs, key=lambda i: (lev[i], i))
    if order != list(range(len(order))):
        raise ValidationError("node ids must be sorted by level")
    parents = [-1 if recs[i].get("parent") in (None, -1) else int(recs[i]["parent"]) for i in order]
    probs = [1.0 if parents[i] < 0 else float(recs[i]["prob"]) for i in order]
    return FilteredTree(parents, probs, h, terminal)


# ---------------------------------------------------------------- rules
@dataclass(frozen=True)
class StoppingRule:
    """Per-node stopping decision.

    ``codes[v]`` is CONTINUE, STOP (at the instant), STOP_PLUS (at the
    right limit) or PASSED (an ancestor already stopped).
    """

    tree: FilteredTree = field(repr=False, compare=False)
    codes: np.ndarray
    kind: str = "system"

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int8)
        object.__setattr__(self, "codes", codes)
        validate_rule(self.tree, codes, self.kind)

    def __eq__(self, other):
        return isinstance(other, StoppingRule) and np.array_equal(self.codes, other.codes)

    def __hash__(self):
        return hash(self.codes.tobytes())

    @property
    def stop_nodes(self):
        return np.flatnonzero((self.codes == STOP) | (self.codes == STOP_PLUS))

    def slots(self):
        """Stopping slot index along each node's path (-1 where still undecided)."""
        return stop_slots(self.tree, self.codes)

    def __le__(self, other):
        lv = self.tree.leaves
        return bool(np.all(self.slots()[lv] <= other.slots()[lv]))

    def describe(self):
        out = []
        for v in self.stop_nodes:
            out.append(f"{v}@{self.tree.level[v]}{'+' if self.codes[v] == STOP_PLUS else ''}")
        return " ".join(out)

    @classmethod
    def at_level(cls, tree, t, plus=False, kind=None):
        """Deterministic rule: stop at level t (or t+), or earlier at the terminal time."""
        codes = np.full(tree.n, PASSED, dtype=np.int8)
        for v in range(tree.n):
            q = tree.parent[v]
            if q >= 0 and codes[q] != CONTINUE:
                continue
            if tree.at_T[v]:
                codes[v] = STOP
            elif tree.level[v] == t:
                codes[v] = STOP_PLUS if plus else STOP
            else:
                codes[v] = CONTINUE
        return cls(tree, codes, kind or ("system" if plus else "plain"))

    @classmethod
    def terminal(cls, tree):
        return cls.at_level(tree, tree.N + 1, kind="plain")

    @classmethod
    def first_hit(cls, tree, inst_hit, plus_hit, kind="system"):
        """First slot where the corresponding boolean flag holds, capped at T."""
        codes = np.full(tree.n, PASSED, dtype=np.int8)
        for v in range(tree.n):
            q = tree.parent[v]
            if q >= 0 and codes[q] != CONTINUE:
                continue
            if inst_hit[v] or tree.at_T[v]:
                codes[v] = STOP
            elif plus_hit[v]:
                codes[v] = STOP_PLUS
            else:
                codes[v] = CONTINUE
        return cls(tree, codes, kind)


def stop_slots(tree, codes):
    slot = np.full(tree.n, -1, dtype=np.int64)
    for v in range(tree.n):
        c = codes[v]
        if c == STOP or c == STOP_PLUS:
            slot[v] = 2 * tree.level[v] + c
        elif c == PASSED and v > 0:
            slot[v] = slot[tree.parent[v]]
    return slot


def validate_rule(tree, codes, kind):
    if kind not in ("plain", "system"):
        raise ValidationError(f"unknown rule kind {kind!r}")
    if codes.shape != (tree.n,):
        raise ValidationError("rule must assign a decision to every node")
    if kind == "plain" and np.any(codes == STOP_PLUS):
        raise ValidationError("plain rules cannot stop at a right limit")
    if codes[0] == PASSED:
        raise ValidationError("root cannot be marked as passed")
    par = tree.parent[1:]
    reached = codes[par] == CONTINUE
    ok = np.where(reached, codes[1:] != PASSED, codes[1:] == PASSED)
    if not np.all(ok):
        bad = 1 + int(np.flatnonzero(~ok)[0])
        raise ValidationError(f"rule is not closed under descendants at node {bad}")
    term = tree.at_T & (codes != PASSED)
    if np.any(codes[term] != STOP):
        bad = int(np.flatnonzero(term & (codes != STOP))[0])
        raise ValidationError(f"rule must stop at the terminal time (node {bad})")


def _rule_table(tree, v, phase_plus, kind):
    """All decision tables for the subtree at v; columns follow ``tree.subtree(v)``.

    Returns (nodes, table) with one row per rule.  ``phase_plus`` means the
    subtree starts at v's right limit, so stopping at the instant is not
    available at v.
    """
    kids = tree.children[v]
    nodes = tree.subtree(v)
    m = len(nodes)
    col = {int(w): i for i, w in enumerate(nodes)}
    rows = []

    def passed_row(code):
        r = np.full(m, PASSED, dtype=np.int8)
        r[0] = code
        return r[None, :]

    if tree.at_T[v]:
        return nodes, passed_row(STOP)
    if not phase_plus:
        rows.append(passed_row(STOP))
    if kind == "system":
        rows.append(passed_row(STOP_PLUS))
    subs = [_rule_table(tree, w, False, kind) for w in kids]
    # Cartesian product over children
    idx = np.array(list(itertools.product(*[range(len(t)) for _, t in subs])), dtype=np.int64)
    cont = np.full((len(idx), m), PASSED, dtype=np.int8)
    cont[:, 0] = CONTINUE
    for c, (sub_nodes, table) in enumerate(subs):
        cols = [col[int(w)] for w in sub_nodes]
        cont[:, cols] = table[idx[:, c]]
    rows.append(cont)
    return nodes, np.concatenate(rows, axis=0)


def count_rules(tree, kind="system", root=0, phase_plus=False):
    """Closed-form number of stopping rules for the subtree at ``root``."""
    cnt = [0] * tree.n
    for v in range(tree.n - 1, -1, -1):
        if tree.at_T[v] or tree.after_T[v]:
            cnt[v] = 1
            continue
        prod = 1
        for w in tree.children[v]:
            prod *= cnt[w]
        cnt[v] = prod + 1 + (kind == "system")
    if tree.at_T[root]:
        return 1
    if phase_plus:
        prod = 1
        for w in tree.children[root]:
            prod *= cnt[w]
        return prod + (kind == "system")
    return cnt[root]


def rule_codes(tree, kind="system", max_rules=DEFAULT_MAX_RULES, root=0, phase_plus=False):
    """Canonically ordered array of decision codes, one row per rule.

    Rows cover all nodes; nodes outside the subtree at ``root`` are
    PASSED.  Rules are sorted lexicographically by node order with
    decision rank stop < stop-plus < continue.
    """
    count = count_rules(tree, kind, root, phase_plus)
    if count > max_rules:
        raise BudgetError(f"oracle size limit: {count} {kind} rules exceed the cap {max_rules}",
                          count, max_rules)
    nodes, table = _rule_table(tree, root, phase_plus, kind)
    codes = np.full((len(table), tree.n), PASSED, dtype=np.int8)
    codes[:, nodes] = table
    rank = np.where(codes == CONTINUE, 2, np.where(codes == PASSED, 3, codes))
    order = np.lexsort(rank.T[::-1])
    return codes[order]


def enumerate_stopping_rules(tree, kind="system", max_rules=DEFAULT_MAX_RULES):
    """Yield every stopping rule of the given kind in canonical order."""
    for row in rule_codes(tree, kind, max_rules):
        yield StoppingRule(tree, row, kind)


# ---------------------------------------------------------------- chains
@dataclass(frozen=True)
class Chain:
    rules: tuple

    def __len__(self):
        return len(self.rules)

    def __getitem__(self, k):
        return self.rules[k]


def build_chain(tree, thresholds, load):
    """First times the accumulated load reaches each threshold, capped at T.

    The load at a non-root node accrues over the period ending there with
    weight h, so the accumulated amount at level t is ``sum h*load`` over
    the path nodes at levels 1..t.  A terminal rule is appended when the
    last threshold does not already force T on every path.
    """
    thr = np.asarray(thresholds, dtype=float)
    if thr.ndim != 1 or np.any(np.diff(thr) < 0):
        raise ValidationError("chain thresholds must be nondecreasing")
    vals = np.asarray(getattr(load, "inst", load), dtype=float)
    if np.any(vals < 0):
        raise ValidationError("chain load must be nonnegative")
    acc = np.zeros(tree.n)
    for v in range(1, tree.n):
        acc[v] = acc[tree.parent[v]] + tree.h * vals[v]
    rules = [StoppingRule.first_hit(tree, acc >= c, np.zeros(tree.n, bool), "plain") for c in thr]
    term = StoppingRule.terminal(tree)
    if not rules or rules[-1] != term:
        rules.append(term)
    return Chain(tuple(rules))


def class_d_norm(tree, X, kind="system"):
    """sup over stopping rules of E|X_tau|, via the Snell envelope of |X|.

    ``kind="system"`` ranges over all slots, ``"plain"`` over instants only.
    """
    inst = np.abs(np.asarray(X.inst, dtype=float))
    plus = np.abs(np.asarray(X.plus, dtype=float))
    S = inst.copy()
    for t in range(tree.N - 1, -1, -1):
        sl = tree.level_slice(t)
        cont = tree.expect_level(S[tree.level_slice(t + 1)], t)
        if kind == "system":
            cont = np.maximum(plus[sl], cont)
        val = np.maximum(inst[sl], cont)
        S[sl] = np.where(tree.stopped[sl], inst[sl], val)
    return float(S[0])
