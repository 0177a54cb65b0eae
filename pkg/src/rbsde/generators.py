"""Generators f(t, y), nonincreasing and continuous in y.

Every generator is called with a physical time ``t`` and an array ``y``.
Node-dependent generators are evaluated through ``at(nodes, t, y)`` where
``nodes`` lines up with the last axis of ``y``.  ``solve_step`` returns
the closed-form root of ``y - h*f(t, y) = target`` when one exists and
``None`` otherwise.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError

PROBE_POINTS = 64
PROBE_RANGE = 50.0


class Generator:
    family = "generic"
    lipschitz = None
    time_only = False

    def __call__(self, t, y):
        raise NotImplementedError

    def at(self, nodes, t, y):
        return self(t, y)

    def lower_bound(self, t):
        """A finite lower bound of f(t, .) when one is known, else None."""
        return None

    def solve_step(self, nodes, t, h, target):
        return None

    def breakpoints(self, t):
        return ()

    def stationary(self, t, slope):
        """Points where the y-derivative equals -slope; None when unknown."""
        return None

    def spec(self):
        raise ValidationError(f"{type(self).__name__} has no scenario representation")


class Affine(Generator):
    """f = a - b*y with b >= 0."""

    family = "affine"

    def __init__(self, a=0.0, b=0.0):
        if b < 0:
            raise ValidationError("affine generator needs b >= 0 to be nonincreasing")
        self.a, self.b = float(a), float(b)
        self.lipschitz = self.b
        self.time_only = self.b == 0

    def __call__(self, t, y):
        return self.a - self.b * np.asarray(y, dtype=float)

    def lower_bound(self, t):
        return self.a if self.b == 0 else None

    def solve_step(self, nodes, t, h, target):
        return (target + h * self.a) / (1.0 + h * self.b)

    def stationary(self, t, slope):
        return ()

    def spec(self):
        return {"family": "affine", "params": {"a": self.a, "b": self.b}}


def zero():
    return Affine(0.0, 0.0)


class Power(Generator):
    """f = a - b*sign(y)*|y|**p."""

    family = "power"

    def __init__(self, a=0.0, b=1.0, p=1.0):
        if b < 0 or p <= 0:
            raise ValidationError("power generator needs b >= 0 and p > 0")
        self.a, self.b, self.p = float(a), float(b), float(p)
        self.lipschitz = self.b if self.p == 1 else (0.0 if self.b == 0 else None)
        self.time_only = self.b == 0

    def __call__(self, t, y):
        y = np.asarray(y, dtype=float)
        return self.a - self.b * np.sign(y) * np.abs(y) ** self.p

    def lower_bound(self, t):
        return self.a if self.b == 0 else None

    def solve_step(self, nodes, t, h, target):
        if self.p == 1 or self.b == 0:
            return (target + h * self.a) / (1.0 + h * self.b)
        return None

    def breakpoints(self, t):
        return (0.0,) if self.p < 1 else ()

    def stationary(self, t, slope):
        if self.p == 1 or self.b == 0 or slope <= 0:
            return ()
        r = (slope / (self.b * self.p)) ** (1.0 / (self.p - 1.0))
        return (-r, r)

    def spec(self):
        return {"family": "power", "params": {"a": self.a, "b": self.b, "p": self.p}}


class Logistic(Generator):
    """f = a - b / (1 + exp(-c*(y - s))), bounded between a - b and a."""

    family = "shifted-logistic"

    def __init__(self, a=0.0, b=1.0, c=1.0, s=0.0):
        if b < 0 or c < 0:
            raise ValidationError("logistic generator needs b >= 0 and c >= 0")
        self.a, self.b, self.c, self.s = float(a), float(b), float(c), float(s)
        self.lipschitz = self.b * self.c / 4.0

    def __call__(self, t, y):
        z = self.c * (np.asarray(y, dtype=float) - self.s)
        return self.a - self.b * 0.5 * (1.0 + np.tanh(0.5 * z))

    def lower_bound(self, t):
        return self.a - self.b

    def stationary(self, t, slope):
        if self.b == 0 or self.c == 0:
            return ()
        q = slope / (self.b * self.c)
        if q > 0.25 or q <= 0:
            return ()
        root = math.sqrt(1.0 - 4.0 * q)
        out = []
        for sig in ((1.0 - root) / 2.0, (1.0 + root) / 2.0):
            if 0 < sig < 1:
                out.append(self.s + math.log(sig / (1.0 - sig)) / self.c)
        return tuple(out)

    def spec(self):
        return {"family": "shifted-logistic",
                "params": {"a": self.a, "b": self.b, "c": self.c, "s": self.s}}


class Tabulated(Generator):
    """Piecewise-linear in y, linearly extrapolated past the end knots.

    ``pieces`` is a list of (knots, values); piece ``i`` applies for
    times in ``[times[i], times[i+1])``.
    """

    family = "tabulated"

    def __init__(self, knots=None, values=None, times=None, pieces=None):
        if pieces is None:
            pieces = [(knots, values)]
            times = [0.0]
        if times is None or len(times) != len(pieces):
            raise ValidationError("tabulated generator needs one start time per piece")
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("tabulated piece times must increase")
        self.pieces = []
        slopes = []
        for kn, vals in pieces:
            kn = np.asarray(kn, dtype=float)
            vals = np.asarray(vals, dtype=float)
            if kn.ndim != 1 or kn.shape != vals.shape or len(kn) < 2:
                raise ValidationError("tabulated generator needs >= 2 knots with matching values")
            if np.any(np.diff(kn) <= 0):
                raise ValidationError("tabulated knots must be strictly increasing")
            if np.any(np.diff(vals) > 0):
                raise ValidationError("tabulated generator is not nonincreasing in y")
            sl = np.diff(vals) / np.diff(kn)
            self.pieces.append((kn, vals, sl[0], sl[-1]))
            slopes.append(np.max(np.abs(sl)))
        self.lipschitz = float(max(slopes))

    def _piece(self, t):
        i = int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1
        return self.pieces[max(i, 0)]

    def __call__(self, t, y):
        kn, vals, s0, s1 = self._piece(t)
        y = np.asarray(y, dtype=float)
        out = np.interp(y, kn, vals)
        out = np.where(y < kn[0], vals[0] + s0 * (y - kn[0]), out)
        return np.where(y > kn[-1], vals[-1] + s1 * (y - kn[-1]), out)

    def lower_bound(self, t):
        kn, vals, s0, s1 = self._piece(t)
        return float(vals[-1]) if s1 == 0 else None

    def breakpoints(self, t):
        return self._piece(t)[0]

    def stationary(self, t, slope):
        return ()

    def spec(self):
        return {"family": "tabulated",
                "params": {"times": self.times.tolist(),
                           "pieces": [{"knots": k.tolist(), "values": v.tolist()}
                                      for k, v, _, _ in self.pieces]}}


class NodeDrift(Generator):
    """Time-only generator given by one value per node."""

    family = "drift"
    time_only = True
    lipschitz = 0.0

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __call__(self, t, y):
        raise ValidationError("node drift needs node indices; use at()")

    def at(self, nodes, t, y):
        return np.broadcast_to(self.values[nodes], np.shape(y)).astype(float)

    def lower_bound(self, t):
        return float(self.values.min())

    def solve_step(self, nodes, t, h, target):
        return target + h * self.values[nodes]


class LinearDrift(Generator):
    """f = drift[node] - s*y; the frozen part of the shifted Picard map."""

    family = "linear-drift"

    def __init__(self, s, drift):
        self.s = float(s)
        self.drift = np.asarray(drift, dtype=float)
        self.lipschitz = self.s

    def at(self, nodes, t, y):
        return self.drift[nodes] - self.s * np.asarray(y, dtype=float)

    def solve_step(self, nodes, t, h, target):
        return (target + h * self.drift[nodes]) / (1.0 + h * self.s)


class Masked(Generator):
    """w[node] * f with a nonnegative per-node weight."""

    def __init__(self, base, weights):
        self.base = base
        self.w = np.asarray(weights, dtype=float)
        if np.any(self.w < 0):
            raise ValidationError("generator mask must be nonnegative")
        self.lipschitz = None if base.lipschitz is None else base.lipschitz * float(self.w.max(initial=0))
        self.time_only = base.time_only

    def at(self, nodes, t, y):
        return self.w[nodes] * self.base.at(nodes, t, y)

    def lower_bound(self, t):
        lb = self.base.lower_bound(t)
        return None if lb is None else min(lb * float(self.w.max(initial=0)), 0.0)

    def solve_step(self, nodes, t, h, target):
        return self.base.solve_step(nodes, t, h * self.w[nodes], target)


class Shifted(Generator):
    """f(t, y - shift[node])."""

    def __init__(self, base, shift):
        self.base = base
        self.shift = np.asarray(shift, dtype=float)
        self.lipschitz = base.lipschitz
        self.time_only = base.time_only

    def at(self, nodes, t, y):
        return self.base.at(nodes, t, np.asarray(y, dtype=float) - self.shift[nodes])

    def lower_bound(self, t):
        return self.base.lower_bound(t)

    def solve_step(self, nodes, t, h, target):
        s = self.shift[nodes]
        z = self.base.solve_step(nodes, t, h, target - s)
        return None if z is None else z + s


class Mirrored(Generator):
    """-f(t, -y): the generator of the negated equation."""

    def __init__(self, base):
        self.base = base
        self.lipschitz = base.lipschitz
        self.time_only = base.time_only

    def __call__(self, t, y):
        return -self.base(t, -np.asarray(y, dtype=float))

    def at(self, nodes, t, y):
        return -self.base.at(nodes, t, -np.asarray(y, dtype=float))

    def solve_step(self, nodes, t, h, target):
        z = self.base.solve_step(nodes, t, h, -np.asarray(target, dtype=float))
        return None if z is None else -z

    def breakpoints(self, t):
        return tuple(-b for b in self.base.breakpoints(t))

    def stationary(self, t, slope):
        pts = self.base.stationary(t, slope)
        return None if pts is None else tuple(-x for x in pts)


class Truncated(Generator):
    """max(f, -n*g(t)); bounded below by -n*g(t)."""

    def __init__(self, base, n, floor=None):
        self.base = base
        self.n = float(n)
        self.floor = floor or (lambda t: math.exp(-t))
        self.time_only = base.time_only

    def at(self, nodes, t, y):
        return np.maximum(self.base.at(nodes, t, y), -self.n * self.floor(t))

    def __call__(self, t, y):
        return np.maximum(self.base(t, y), -self.n * self.floor(t))

    def lower_bound(self, t):
        return -self.n * self.floor(t)

    def breakpoints(self, t):
        cross = self._crossing(t)
        return tuple(self.base.breakpoints(t)) + (() if cross is None else (cross,))

    def stationary(self, t, slope):
        return self.base.stationary(t, slope)

    def _crossing(self, t):
        """Where the nonincreasing base meets the floor, if it does."""
        c = -self.n * self.floor(t)
        lo, hi = -1.0, 1.0
        while float(self.base(t, lo)) < c:
            lo *= 2.0
            if lo < -1e12:
                return None
        while float(self.base(t, hi)) > c:
            hi *= 2.0
            if hi > 1e12:
                return None
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if float(self.base(t, mid)) > c:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(1.0, abs(mid)):
                break
        return 0.5 * (lo + hi)


def default_rho(t):
    return math.exp(-t)


class Moreau(Generator):
    """c_n * inf_x { f(t, x) + n|y - x| }.

    The infimum is attained at some x >= y inside the window
    ``[y, y + (f(t, y) - lb(t)) / n]``.  When the base family reports its
    kinks and stationary points the minimum is taken over those and the
    window ends (exact); otherwise a grid scan is refined by golden
    sections.  With ``rho`` given the weight
    is ``c_n = n*rho/(1 + n*rho)``, otherwise 1.
    """

    GRID = 33
    ACCURACY = 1e-9

    def __init__(self, base, n, rho=None):
        self.base = base
        self.n = float(n)
        if self.n <= 0:
            raise ValidationError("Moreau index must be positive")
        self.rho = rho
        self.lipschitz = self.n
        if base.lower_bound(0.0) is None:
            raise ValidationError("Moreau scheme requires declared lower bound")

    def weight(self, t):
        if self.rho is None:
            return 1.0
        r = self.rho(t)
        return self.n * r / (1.0 + self.n * r)

    def _phi(self, nodes, t, x, y):
        return self.base.at(nodes, t, x) + self.n * (x - y)

    def at(self, nodes, t, y):
        y = np.asarray(y, dtype=float)
        fy = self.base.at(nodes, t, y)
        lb = self.base.lower_bound(t)
        if lb is None:
            raise ValidationError("Moreau scheme requires declared lower bound")
        width = np.maximum(fy - lb, 0.0) / self.n
        best = fy.copy()
        lip = self.base.lipschitz
        # a nonincreasing f with Lipschitz constant <= n is its own regularization
        if lip is not None and lip <= self.n:
            return self.weight(t) * best
        if np.any(width > 0):
            crit = self.base.stationary(t, self.n)
            if crit is None:
                best = np.minimum(best, self._search(nodes, t, y, width))
            else:
                # piecewise smooth: the minimum sits at an end, a kink or a stationary point
                best = np.minimum(best, self._phi(nodes, t, y + width, y))
                for b in crit:
                    inside = (b >= y) & (b <= y + width)
                    if np.any(inside):
                        val = self._phi(nodes, t, np.where(inside, b, y), y)
                        best = np.minimum(best, np.where(inside, val, best))
            for b in self.base.breakpoints(t):
                inside = (b >= y) & (b <= y + width)
                if np.any(inside):
                    val = self._phi(nodes, t, np.where(inside, b, y), y)
                    best = np.minimum(best, np.where(inside, val, best))
        return self.weight(t) * best

    def __call__(self, t, y):
        return self.at(None, t, y)

    def _search(self, nodes, t, y, width):
        u = np.linspace(0.0, 1.0, self.GRID).reshape((-1,) + (1,) * y.ndim)
        xs = y + width * u
        vals = self._phi(nodes, t, xs, y)
        i = np.argmin(vals, axis=0)
        best = np.min(vals, axis=0)
        step = width / (self.GRID - 1)
        lo = y + np.maximum(i - 1, 0) * step
        hi = y + np.minimum(i + 1, self.GRID - 1) * step
        g = (math.sqrt(5.0) - 1.0) / 2.0
        a = hi - g * (hi - lo)
        b = lo + g * (hi - lo)
        fa = self._phi(nodes, t, a, y)
        fb = self._phi(nodes, t, b, y)
        while np.max(hi - lo) > self.ACCURACY:
            left = fa < fb
            hi = np.where(left, b, hi)
            lo = np.where(left, lo, a)
            new = np.where(left, hi - g * (hi - lo), lo + g * (hi - lo))
            fnew = self._phi(nodes, t, new, y)
            a, b, fa, fb = (np.where(left, new, b), np.where(left, a, new),
                            np.where(left, fnew, fb), np.where(left, fa, fnew))
            best = np.minimum(best, fnew)
        return best

    def lower_bound(self, t):
        return min(self.weight(t) * self.base.lower_bound(t), 0.0)


class Fnm(Generator):
    """n*rho/(1 + n*rho) * max(min(f, n), -m)."""

    def __init__(self, base, n, m, rho=None):
        self.base = base
        self.n, self.m = float(n), float(m)
        self.rho = rho or default_rho

    def weight(self, t):
        r = self.rho(t)
        return self.n * r / (1.0 + self.n * r)

    def at(self, nodes, t, y):
        return self.weight(t) * np.clip(self.base.at(nodes, t, y), -self.m, self.n)

    def __call__(self, t, y):
        return self.at(None, t, y)

    def lower_bound(self, t):
        return -self.weight(t) * self.m


def moreau_approx(f, n, rho=None):
    return Moreau(f, n, rho)


def truncate(f, n, floor=None):
    return Truncated(f, n, floor)


def fnm_ladder(f, n, m, rho=None):
    return Fnm(f, n, m, rho)


FAMILIES = {
    "affine": Affine,
    "power": Power,
    "shifted-logistic": Logistic,
    "logistic": Logistic,
    "tabulated": None,
}


def from_spec(spec):
    fam = spec.get("family")
    params = dict(spec.get("params", {}))
    if fam == "tabulated":
        if "pieces" in params:
            return Tabulated(times=params.get("times", [0.0]),
                             pieces=[(p["knots"], p["values"]) for p in params["pieces"]])
        return Tabulated(params["knots"], params["values"])
    if fam not in FAMILIES:
        raise ValidationError(f"unknown generator family {fam!r}")
    try:
        return FAMILIES[fam](**{k: float(v) for k, v in params.items()})
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {fam}: {exc}") from None


def probe_monotone(f, times, nodes=None, lo=-PROBE_RANGE, hi=PROBE_RANGE):
    """Largest increase of y -> f(t, y) over a 64-point probe grid per time."""
    ys = np.linspace(lo, hi, PROBE_POINTS)
    worst = 0.0
    for t in times:
        if nodes is None:
            vals = f(t, ys)[:, None]
        else:
            nodes = np.asarray(nodes)
            vals = f.at(nodes, t, np.repeat(ys[:, None], len(nodes), axis=1))
        worst = max(worst, float(np.max(np.diff(vals, axis=0), initial=0.0)))
    return worst


def check_monotone(f, times):
    worst = probe_monotone(f, times)
    if worst > 0:
        raise ValidationError(f"generator is not nonincreasing in y (probe increase {worst:.3g})")
    return True
