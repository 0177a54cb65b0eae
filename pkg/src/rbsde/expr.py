"""Arithmetic expressions over node labels.

Grammar: numbers, names, parentheses, unary minus, binary operators and
function calls.  Every binary operator associates to the left (so
``2^3^2`` is ``(2^3)^2``).  Comparisons yield 1.0 or 0.0 and bind
loosest.  Evaluation is vectorized over numpy label arrays.
"""
from __future__ import annotations

import re

import numpy as np

from .errors import ValidationError

TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
                   r"|([A-Za-z_][A-Za-z_0-9]*)|(<=|>=|==|!=|[-+*/^(),<>]))")

BINARY = {
    "<": 1, "<=": 1, ">": 1, ">=": 1, "==": 1, "!=": 1,
    "+": 2, "-": 2,
    "*": 3, "/": 3,
    "^": 4,
}
UNARY_BP = 3

FUNCS = {
    "max": (2, None, lambda *a: _fold(np.maximum, a)),
    "min": (2, None, lambda *a: _fold(np.minimum, a)),
    "abs": (1, 1, np.abs),
    "exp": (1, 1, np.exp),
    "log": (1, 1, np.log),
    "sqrt": (1, 1, np.sqrt),
}

OPS = {
    "+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide, "^": np.power,
    "<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal,
    "==": np.equal, "!=": np.not_equal,
}


def _fold(op, args):
    out = args[0]
    for a in args[1:]:
        out = op(out, a)
    return out


def tokenize(text):
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValidationError(f"bad character in expression {text!r} at {pos}")
        num, name, op = m.groups()
        if num is not None:
            out.append(("num", float(num)))
        elif name is not None:
            out.append(("name", name))
        else:
            out.append(("op", op))
        pos = m.end()
    out.append(("end", None))
    return out


class Parser:
    def __init__(self, text):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, op):
        tok = self.next()
        if tok != ("op", op):
            raise ValidationError(f"expected {op!r} in expression {self.text!r}")

    def parse(self):
        node = self.expr(0)
        if self.peek()[0] != "end":
            raise ValidationError(f"trailing input in expression {self.text!r}")
        return node

    def expr(self, min_bp):
        lhs = self.prefix()
        while True:
            kind, val = self.peek()
            if kind != "op" or val not in BINARY or BINARY[val] <= min_bp:
                return lhs
            self.next()
            rhs = self.expr(BINARY[val])
            lhs = ("bin", val, lhs, rhs)

    def prefix(self):
        kind, val = self.next()
        if kind == "num":
            return ("num", val)
        if kind == "op" and val in "+-":
            # unary signs take only a power to their right: -2^2 is -(2^2)
            operand = self.expr(UNARY_BP)
            return ("neg", operand) if val == "-" else operand
        if kind == "op" and val == "(":
            node = self.expr(0)
            self.expect(")")
            return node
        if kind == "name":
            if self.peek() == ("op", "("):
                self.next()
                args = []
                if self.peek() != ("op", ")"):
                    args.append(self.expr(0))
                    while self.peek() == ("op", ","):
                        self.next()
                        args.append(self.expr(0))
                self.expect(")")
                if val not in FUNCS:
                    raise ValidationError(f"unknown function {val!r}")
                lo, hi, _ = FUNCS[val]
                if len(args) < lo or (hi is not None and len(args) > hi):
                    raise ValidationError(f"wrong number of arguments for {val}")
                return ("call", val, args)
            return ("name", val)
        raise ValidationError(f"unexpected token {val!r} in expression {self.text!r}")


def parse(text):
    p = Parser(str(text))
    return p.parse()


def evaluate(node, env):
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "name":
        if node[1] not in env:
            raise ValidationError(f"unknown name {node[1]!r} in expression")
        return env[node[1]]
    if kind == "neg":
        return -evaluate(node[1], env)
    if kind == "bin":
        a = evaluate(node[2], env)
        b = evaluate(node[3], env)
        with np.errstate(all="ignore"):
            r = OPS[node[1]](a, b)
        return r.astype(float) if node[1] in BINARY and BINARY[node[1]] == 1 else r
    if kind == "call":
        args = [evaluate(a, env) for a in node[2]]
        with np.errstate(all="ignore"):
            return FUNCS[node[1]][2](*args)
    raise ValidationError(f"bad expression node {kind!r}")


def names(node):
    kind = node[0]
    if kind == "name":
        return {node[1]}
    if kind == "neg":
        return names(node[1])
    if kind == "bin":
        return names(node[2]) | names(node[3])
    if kind == "call":
        out = set()
        for a in node[2]:
            out |= names(a)
        return out
    return set()


def eval_expr(text, env, size):
    """Evaluate an expression to a float array of the given size."""
    val = evaluate(parse(text), env)
    out = np.broadcast_to(np.asarray(val, dtype=float), (size,)).astype(float)
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"expression {text!r} produced non-finite values")
    return out
