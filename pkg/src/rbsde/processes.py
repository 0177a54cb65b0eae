"""Processes on the doubled time grid and their decompositions."""
from __future__ import annotations

import csv
import io

import numpy as np

from .errors import InvariantError, ValidationError

SUPERMART_TOL = 1e-10


class LatticeProcess:
    """Adapted process with one value per node at ``t`` and one at ``t+``.

    Level-``N`` nodes have no right limit; their plus value mirrors the
    instant value.
    """

    __slots__ = ("tree", "inst", "plus")

    def __init__(self, tree, inst, plus=None):
        inst = np.array(inst, dtype=float).reshape(tree.n)
        plus = inst.copy() if plus is None else np.array(plus, dtype=float).reshape(tree.n)
        top = tree.level == tree.N
        plus[top] = inst[top]
        if not (np.all(np.isfinite(inst)) and np.all(np.isfinite(plus))):
            raise ValidationError("process values must be finite")
        self.tree = tree
        self.inst = inst
        self.plus = plus

    @classmethod
    def constant(cls, tree, c):
        return cls(tree, np.full(tree.n, float(c)))

    @classmethod
    def zeros(cls, tree):
        return cls.constant(tree, 0.0)

    def copy(self):
        return type(self)(self.tree, self.inst.copy(), self.plus.copy())

    def frozen(self):
        """Values at and after the terminal time replaced by the value at T."""
        tr = self.tree
        inst, plus = self.inst.copy(), self.plus.copy()
        for v in np.flatnonzero(tr.after_T):
            inst[v] = inst[tr.parent[v]]
        plus[tr.stopped] = inst[tr.stopped]
        return LatticeProcess(tr, inst, plus)

    def slots(self):
        """Values as an (n, 2) array: column 0 instant, column 1 right limit."""
        return np.stack([self.inst, self.plus], axis=1)

    def _wrap(self, inst, plus):
        return LatticeProcess(self.tree, inst, plus)

    def _other(self, o):
        if isinstance(o, LatticeProcess):
            return o.inst, o.plus
        return o, o

    def __add__(self, o):
        a, b = self._other(o)
        return self._wrap(self.inst + a, self.plus + b)

    __radd__ = __add__

    def __sub__(self, o):
        a, b = self._other(o)
        return self._wrap(self.inst - a, self.plus - b)

    def __rsub__(self, o):
        a, b = self._other(o)
        return self._wrap(a - self.inst, b - self.plus)

    def __mul__(self, o):
        a, b = self._other(o)
        return self._wrap(self.inst * a, self.plus * b)

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.inst, -self.plus)

    def __abs__(self):
        return self._wrap(np.abs(self.inst), np.abs(self.plus))

    def maximum(self, o):
        a, b = self._other(o)
        return self._wrap(np.maximum(self.inst, a), np.maximum(self.plus, b))

    def minimum(self, o):
        a, b = self._other(o)
        return self._wrap(np.minimum(self.inst, a), np.minimum(self.plus, b))

    def max_abs_diff(self, o, mask=None):
        a, b = self._other(o)
        d = np.maximum(np.abs(self.inst - a), np.abs(self.plus - b))
        if mask is not None:
            d = d[mask]
        return float(d.max()) if d.size else 0.0

    def le(self, o, tol=0.0, mask=None):
        a, b = self._other(o)
        ok = (self.inst <= a + tol) & (self.plus <= b + tol)
        return bool(np.all(ok if mask is None else ok[mask]))

    def __repr__(self):
        return f"LatticeProcess(inst={self.inst!r}, plus={self.plus!r})"

    # ---------------------------------------------------------- csv
    def rows(self, upto_T=True):
        tr = self.tree
        for v in range(tr.n):
            if upto_T and tr.after_T[v]:
                continue
            t = int(tr.level[v])
            yield v, str(t), self.inst[v]
            if t < tr.N and not (upto_T and tr.at_T[v]):
                yield v, f"{t}+", self.plus[v]

    def to_csv(self, path=None, upto_T=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node_id", "slot", "value"])
        for v, s, x in self.rows(upto_T):
            w.writerow([v, s, repr(float(x))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, tree, text):
        """Inverse of :meth:`to_csv`; unspecified right limits copy the instant."""
        inst = np.full(tree.n, np.nan)
        plus = np.full(tree.n, np.nan)
        for row in csv.DictReader(io.StringIO(text)):
            v = int(row["node_id"])
            s = row["slot"]
            if s.endswith("+"):
                if int(s[:-1]) != tree.level[v]:
                    raise ValidationError(f"slot {s} does not exist at node {v}")
                plus[v] = float(row["value"])
            else:
                if int(s) != tree.level[v]:
                    raise ValidationError(f"slot {s} does not exist at node {v}")
                inst[v] = float(row["value"])
        for v in range(tree.n):
            if np.isnan(inst[v]):
                if tree.after_T[v]:
                    inst[v] = inst[tree.parent[v]]
                else:
                    raise ValidationError(f"missing value at node {v}")
        plus = np.where(np.isnan(plus), inst, plus)
        return cls(tree, inst, plus)


class FVProcess(LatticeProcess):
    """Finite-variation process with K_0 = 0.

    ``star`` holds the jump over the open period into each node,
    ``K(v) - K(parent+)``, and ``right`` holds ``K(v+) - K(v)``.
    """

    __slots__ = ()

    @classmethod
    def from_increments(cls, tree, star, right):
        star = np.asarray(star, dtype=float)
        right = np.asarray(right, dtype=float).copy()
        right[tree.level == tree.N] = 0.0
        inst = np.zeros(tree.n)
        plus = np.zeros(tree.n)
        plus[0] = right[0]
        for v in range(1, tree.n):
            inst[v] = plus[tree.parent[v]] + star[v]
            plus[v] = inst[v] + right[v]
        return cls(tree, inst, plus)

    @property
    def star(self):
        s = np.zeros(self.tree.n)
        s[1:] = self.inst[1:] - self.plus[self.tree.parent[1:]]
        return s

    @property
    def right(self):
        return self.plus - self.inst

    def total_variation(self):
        """Pathwise accumulated variation, as a process."""
        return FVProcess.from_increments(self.tree, np.abs(self.star), np.abs(self.right))

    def is_increasing(self, tol=0.0):
        return bool(np.all(self.star >= -tol) and np.all(self.right >= -tol))

    def predictability_gap(self):
        """Largest spread of the period jump among siblings."""
        tr = self.tree
        s = self.star
        worst = 0.0
        for kids in tr.children:
            if len(kids) > 1:
                worst = max(worst, float(np.ptp(s[kids])))
        return worst


def as_fv(K):
    return K if isinstance(K, FVProcess) else FVProcess(K.tree, K.inst, K.plus)


def jordan(K):
    """Signwise split K = K+ - K- with at most one part moving per increment."""
    K = as_fv(K)
    tr = K.tree
    s, r = K.star, K.right
    kp = FVProcess.from_increments(tr, np.maximum(s, 0.0), np.maximum(r, 0.0))
    km = FVProcess.from_increments(tr, np.maximum(-s, 0.0), np.maximum(-r, 0.0))
    return kp, km


def check_supermartingale(tree, X, tol=SUPERMART_TOL):
    """Return (ok, worst violation, (node, slot)) for X(t) >= X(t+) >= E[X_{t+1}|F_t].

    Slots after the terminal time are not inspected.
    """
    worst, where = 0.0, None
    live = tree.live
    d = np.where(live, X.plus - X.inst, 0.0)
    if d.size and d.max() > worst:
        v = int(np.argmax(d))
        worst, where = float(d[v]), (v, f"{tree.level[v]}")
    for t in range(tree.N):
        sl = tree.level_slice(t)
        e = tree.expect_level(X.inst[tree.level_slice(t + 1)], t)
        gap = np.where(live[sl], e - X.plus[sl], 0.0)
        if gap.size and gap.max() > worst:
            i = int(np.argmax(gap))
            v = sl.start + i
            worst, where = float(gap[i]), (v, f"{t}+")
    return worst <= tol, worst, where


def doob_parts(tree, X):
    """Martingale increments and predictable period jumps of an adapted X.

    Returns (dM, a) with dM[v] = X(v) - E[X | parent] and
    a[v] = X(parent+) - E[X | parent], both indexed by the child node.
    """
    dM = np.zeros(tree.n)
    a = np.zeros(tree.n)
    for t in range(tree.N):
        nxt = tree.level_slice(t + 1)
        e = tree.expect_level(X.inst[nxt], t)
        ec = tree.expand_level(e, t)
        dM[nxt] = X.inst[nxt] - ec
        a[nxt] = X.plus[tree.parent[nxt]] - ec
    stop = tree.after_T
    dM[stop] = 0.0
    a[stop] = 0.0
    return dM, a


def martingale_from_increments(tree, dM):
    M = np.zeros(tree.n)
    for v in range(1, tree.n):
        M[v] = M[tree.parent[v]] + dM[v]
    return LatticeProcess(tree, M, M)


def mertens_decompose(tree, X, tol=SUPERMART_TOL):
    """Split a supermartingale as X = X_0 + M - K.

    K is increasing and predictable: its period jump into a node equals
    ``X(parent+) - E[X | parent]`` and its right jump is ``X(t) - X(t+)``.
    """
    ok, worst, where = check_supermartingale(tree, X, tol)
    if not ok:
        raise InvariantError(f"not a supermartingale: violation {worst:.3g} at node/slot {where}")
    X = X.frozen()
    dM, a = doob_parts(tree, X)
    M = martingale_from_increments(tree, dM)
    right = np.where(tree.live, X.inst - X.plus, 0.0)
    K = FVProcess.from_increments(tree, a, right)
    return M, K


def martingale_gap(tree, M):
    """Largest |E[M_{t+1}|F_t] - M(t+)| together with the largest right jump."""
    worst = float(np.max(np.abs(M.plus - M.inst))) if tree.n else 0.0
    for t in range(tree.N):
        sl = tree.level_slice(t)
        e = tree.expect_level(M.inst[tree.level_slice(t + 1)], t)
        g = np.where(tree.live[sl], np.abs(e - M.plus[sl]), 0.0)
        worst = max(worst, float(g.max()))
    return worst


def left_right_limits(X):
    """Grid left limit (value at the previous right limit) and right limit."""
    tr = X.tree
    left_inst = X.inst.copy()
    left_inst[1:] = X.plus[tr.parent[1:]]
    right_inst = X.plus.copy()
    top = tr.level == tr.N
    right_inst[top] = X.inst[top]
    return LatticeProcess(tr, left_inst, X.plus), LatticeProcess(tr, right_inst, X.plus)
