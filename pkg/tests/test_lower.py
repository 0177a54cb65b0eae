import numpy as np
import pytest

from rbsde.errors import ValidationError
from rbsde.fexp import solve_bsde
from rbsde.filtration import binomial_tree, build_chain
from rbsde.generators import Affine, Logistic, Power, zero
from rbsde.invariants import report, verify_solution
from rbsde.lower import (apriori_diagnostics, reflect_barrier_ladder, representation_check,
                         solve_linear, solve_lipschitz_picard, solve_lower, solve_monotone,
                         solve_upper)
from rbsde.processes import LatticeProcess
from rbsde.snell import snell_envelope

XI = [0.0, 3.0, 1.0]


def jump_barrier(tree):
    """L_0 = 2, L_{0+} = 0, low elsewhere."""
    return LatticeProcess(tree, [2.0, -5.0, -5.0], [0.0, -5.0, -5.0])


def test_inactive_barrier_is_bsde():
    tree = binomial_tree(3, 0.5, 0.4)
    xi = tree.labels()["k"]
    L = LatticeProcess.constant(tree, -1e9)
    for scheme in ("linear", "direct", "picard"):
        f = Affine(0.3, 0.0) if scheme == "linear" else Affine(0.3, 1.0)
        sol = solve_lower(tree, xi, f, None, L, scheme)
        assert np.allclose(sol.Y.inst, solve_bsde(tree, xi, f).Y.inst, atol=1e-12)
        assert np.allclose(sol.Rp.plus, 0.0)


def test_zero_generator_is_snell(rng):
    tree = binomial_tree(3)
    L = LatticeProcess(tree, rng.normal(size=tree.n), rng.normal(size=tree.n))
    xi = rng.normal(size=tree.n) + 1.0
    L.inst[tree.at_T] = np.minimum(L.inst[tree.at_T], xi[tree.at_T])
    sol = solve_linear(tree, xi, zero(), None, L)
    S = snell_envelope(tree, L, xi).Y
    assert np.allclose(sol.Y.inst, S.inst) and np.allclose(sol.Y.plus, S.plus)


def test_linear_drift_accrual(one_period):
    L = LatticeProcess(one_period, [0.0, 0.0, 0.0])
    sol = solve_linear(one_period, 0.0, Affine(1.0, 0.0), None, L)
    assert sol.y0 == pytest.approx(1.0)
    assert np.allclose(sol.Rp.plus, 0.0)


def test_picard_time_only_converges_at_once(one_period):
    sol = solve_lipschitz_picard(one_period, XI, Affine(1.0, 0.0), None, jump_barrier(one_period))
    assert sol.diagnostics["iterations"] == 1


def test_picard_jump_example(one_period):
    sol = solve_lipschitz_picard(one_period, XI, Affine(0, 1), None, jump_barrier(one_period))
    assert sol.y0 == pytest.approx(2.0, abs=1e-12)
    assert sol.Y.plus[0] == pytest.approx(1.0, abs=1e-12)
    assert sol.Rp.right[0] == pytest.approx(1.0, abs=1e-12)
    verify_solution(one_period, sol, XI, L=jump_barrier(one_period))


def test_picard_interleaving():
    tree = binomial_tree(3, 0.4, 0.5)
    L = LatticeProcess(tree, np.where(tree.level == 1, 0.5, -3.0))
    start = LatticeProcess.constant(tree, -3.0)
    sol = solve_lipschitz_picard(tree, tree.labels()["k"], Affine(0.2, 1.0), None, L, start=start)
    assert sol.diagnostics["picard_shift"] == 0.0
    assert sol.diagnostics["bracket_ok"]
    assert len(sol.log) > 2


def test_picard_needs_lipschitz(one_period):
    with pytest.raises(ValidationError):
        solve_lipschitz_picard(one_period, XI, Power(0, 1, 3), None, jump_barrier(one_period))


def test_monotone_agrees_with_picard():
    tree = binomial_tree(3, 0.5, 0.4)
    L = LatticeProcess(tree, np.where(tree.level == 1, 1.5, -2.0))
    f = Logistic(0.2, 2.0, 3.0, 0.0)
    a = solve_lower(tree, tree.labels()["k"], f, None, L, "picard")
    b = solve_lower(tree, tree.labels()["k"], f, None, L, "monotone")
    assert np.max(np.abs(a.Y.inst - b.Y.inst)) <= 1e-8


def test_monotone_cubic_unreflected(one_period):
    f = Power(0, 1, 3)
    L = LatticeProcess.constant(one_period, -1e3)
    sol = solve_monotone(one_period, XI, f, None, L)
    assert sol.y0 == pytest.approx(solve_bsde(one_period, XI, f).y0, abs=1e-8)


def test_monotone_cubic_reflected(one_period):
    L = LatticeProcess(one_period, [2.0, -5.0, -5.0])
    sol = solve_monotone(one_period, XI, Power(0, 1, 3), None, L)
    assert sol.y0 == pytest.approx(2.0, abs=1e-10)
    rep = report(one_period, sol, XI, L=L)
    assert rep["minimality_lower"] <= 1e-9


def test_upper_barrier_mirror(one_period):
    U = LatticeProcess(one_period, [0.5, 10.0, 10.0])
    sol = solve_upper(one_period, XI, Affine(0, 1), None, U)
    assert sol.y0 == pytest.approx(0.5)
    # Y(0+) = 0.5 needs E[Y_1] - R = 0.5 + h*0.5, so the period push is 1
    assert sol.Rm.star[1] == pytest.approx(1.0) and sol.Rm.right[0] == 0.0
    assert np.allclose(sol.Rp.plus, 0.0)


def test_representation_examples(one_period):
    L = jump_barrier(one_period)
    sol = solve_lower(one_period, XI, Affine(0, 1), None, L, "picard")
    assert representation_check(one_period, sol, Affine(0, 1), XI, L)["max"] <= 1e-9
    L = LatticeProcess.constant(one_period, 1.0)
    sol = solve_lower(one_period, 1.0, zero(), None, L)
    assert np.allclose(sol.Y.inst, 1.0)
    assert representation_check(one_period, sol, zero(), 1.0, L)["max"] == 0.0
    L = LatticeProcess.constant(one_period, -1e9)
    sol = solve_lower(one_period, XI, Affine(0, 1), None, L)
    assert representation_check(one_period, sol, Affine(0, 1), XI, L)["max"] <= 1e-9


def test_apriori_identity(rng):
    tree = binomial_tree(3, 0.5, 0.3)
    L = LatticeProcess(tree, rng.normal(size=tree.n), rng.normal(size=tree.n))
    xi = np.abs(rng.normal(size=tree.n)) + 2
    f = Logistic(0.1, 1.0, 2.0, 0.0)
    sol = solve_lower(tree, xi, f, None, L)
    X = snell_envelope(tree, L, xi).Y
    d = apriori_diagnostics(tree, sol, f, xi, None, L, X)
    assert d["identity_residual"] <= 1e-10
    assert d["rhs_aggregate"] > 0
    with pytest.raises(ValidationError):
        apriori_diagnostics(tree, sol, f, xi, None, L, L - 10.0)


def test_apriori_inactive_barrier():
    tree = binomial_tree(2)
    L = LatticeProcess.constant(tree, -1e9)
    sol = solve_lower(tree, tree.labels()["k"], zero(), None, L)
    d = apriori_diagnostics(tree, sol, zero(), tree.labels()["k"], None, L)
    assert d["reflection_total"] == 0.0 and d["identity_residual"] <= 1e-12


def test_barrier_ladder_increases(rng):
    tree = binomial_tree(3)
    L = LatticeProcess(tree, rng.normal(size=tree.n), rng.normal(size=tree.n))
    chain = build_chain(tree, [1.0, 2.0, 3.0], np.ones(tree.n))
    ladder = reflect_barrier_ladder(tree, L, chain)
    for a, b in zip(ladder, ladder[1:]):
        assert a.le(b)
    assert np.allclose(ladder[-1].inst[tree.live], L.inst[tree.live])
