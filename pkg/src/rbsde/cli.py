"""Command line: solve, dynkin, verify, horizon-study."""
from __future__ import annotations

import argparse
import json
import sys

from . import runner
from .errors import RbsdeError, ValidationError
from .filtration import DEFAULT_MAX_PAIRS, DEFAULT_MAX_RULES
from .lower import SCHEMES as LOWER_SCHEMES
from .double import SCHEMES as DOUBLE_SCHEMES
from .oracle import OracleBudget
from .scenario import BARRIERS, SUITES, Scenario
from .verify import RandomFamily


def _ladder(text):
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("ladder is a comma-separated list of integers") from None


def _suites(text):
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in SUITES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown suites {bad}; choose from {', '.join(SUITES)}")
    return names


def build_parser():
    p = argparse.ArgumentParser(prog="rbsde", description="Reflected BSDE solvers on finite event trees.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a scenario and write CSVs and a report")
    s.add_argument("--scenario", required=True)
    s.add_argument("--barrier", choices=BARRIERS)
    s.add_argument("--scheme", choices=sorted(set(LOWER_SCHEMES) | set(DOUBLE_SCHEMES)))
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--ladder", type=_ladder, help="e.g. 1,2,4,8")
    s.add_argument("--rho-scale", type=float, help="scale of the weight rho in the f_{n,m} ladder")
    s.add_argument("--inner", choices=("direct", "picard", "decoupled"))
    s.add_argument("--out", required=True)

    d = sub.add_parser("dynkin", help="game value by dynamic programming and/or enumeration")
    d.add_argument("--scenario", required=True)
    d.add_argument("--mode", choices=("dp", "exact", "both"), default="dp")
    d.add_argument("--epsilon", type=float)
    d.add_argument("--max-rules", type=int, default=DEFAULT_MAX_RULES)
    d.add_argument("--max-pairs", type=int, default=DEFAULT_MAX_PAIRS)
    d.add_argument("--out", required=True)

    v = sub.add_parser("verify", help="run verification suites against brute-force oracles")
    v.add_argument("--scenario", help="fixed scenario; default is the random family")
    v.add_argument("--suites", type=_suites)
    v.add_argument("--trials", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--max-rules", type=int)
    v.add_argument("--max-pairs", type=int)
    v.add_argument("--max-N", type=int, default=RandomFamily.max_N)
    v.add_argument("--max-branch", type=int, default=RandomFamily.max_branch)
    v.add_argument("--rule-cap", type=int, default=RandomFamily.rule_cap)
    v.add_argument("--out", required=True)

    h = sub.add_parser("horizon-study", help="root values over growing horizons")
    h.add_argument("--scenario", required=True)
    h.add_argument("--a-max", type=int)
    h.add_argument("--out", required=True)
    return p


def dispatch(args):
    if args.command == "solve":
        sc = Scenario.load(args.scenario)
        return runner.run_solve(sc, args.out, args.barrier, scheme=args.scheme, tol=args.tol,
                                max_iter=args.max_iter, ladder=args.ladder, rho_scale=args.rho_scale,
                                inner=args.inner)
    if args.command == "dynkin":
        sc = Scenario.load(args.scenario)
        if args.epsilon is not None and args.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        budget = OracleBudget(args.max_rules, args.max_pairs)
        return runner.run_dynkin(sc, args.out, args.mode, args.epsilon, budget)
    if args.command == "verify":
        sc = Scenario.load(args.scenario) if args.scenario else None
        fam = RandomFamily(max_N=args.max_N, max_branch=args.max_branch, rule_cap=args.rule_cap)
        return runner.run_verify(args.out, sc, args.suites, args.trials, args.seed,
                                 args.max_rules, args.max_pairs, fam)
    sc = Scenario.load(args.scenario)
    return runner.horizon_study(sc, args.out, args.a_max)


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = getattr(args, "out", None)
    try:
        code, rep = dispatch(args)
    except RbsdeError as err:
        code, rep = runner.fail(out, err)
    except ValueError as err:
        code, rep = runner.fail(out, ValidationError(str(err)))
    summary = {k: rep.get(k) for k in ("y0", "dp_value", "ok", "error", "message") if k in rep}
    stream = sys.stdout if code == 0 else sys.stderr
    print(json.dumps({"command": args.command, "exit_code": code, **summary}, default=str), file=stream)
    return code


if __name__ == "__main__":
    sys.exit(main())
