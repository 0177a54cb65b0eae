import numpy as np
import pytest

from rbsde.errors import ConvergenceError
from rbsde.fexp import (dominating_supermartingale, f_expectation, implicit_step,
                        integrability_bound, solve_bsde)
from rbsde.filtration import StoppingRule, binomial_tree
from rbsde.generators import Affine, Generator, Logistic, Power, zero
from rbsde.processes import LatticeProcess


def test_implicit_step_linear():
    assert implicit_step(np.array([2.0]), 0.0, 1.0, Affine(0, 1))[0] == pytest.approx(1.0)


def test_implicit_step_zero_step():
    assert implicit_step(np.array([5.0]), 0.0, 0.0, Power(0, 1, 3))[0] == 5.0


def test_implicit_step_cubic():
    y = implicit_step(np.array([2.0, -2.0, 30.0]), 0.0, 1.0, Power(0, 1, 3))
    assert y[:2] == pytest.approx([1.0, -1.0], abs=1e-14)
    assert y[2] + y[2] ** 3 == pytest.approx(30.0, rel=1e-14)


def test_implicit_step_logistic_residual(rng):
    f = Logistic(0.3, 2.0, 3.0, 0.5)
    target = rng.uniform(-5, 5, 50)
    y = implicit_step(target, 0.0, 0.5, f)
    assert np.max(np.abs(y - 0.5 * f(0.0, y) - target)) <= 1e-13


def test_implicit_step_unbounded():
    class Runaway(Generator):
        def __call__(self, t, y):
            return np.full(np.shape(y), 1e12)

    with pytest.raises(ConvergenceError, match="unbounded generator step"):
        implicit_step(np.array([0.0]), 0.0, 1.0, Runaway())


def test_bsde_zero_generator_is_conditional_expectation():
    tree = binomial_tree(2, 1.0, 0.3)
    xi = tree.labels()["k"] ** 2
    Y = solve_bsde(tree, xi, zero()).Y
    assert Y.inst[1] == pytest.approx(0.3 * 4 + 0.7 * 1)
    assert Y.inst[0] == pytest.approx(0.3 * Y.inst[1] + 0.7 * Y.inst[2])


def test_bsde_linear_one_period(one_period):
    assert solve_bsde(one_period, [0.0, 3.0, 1.0], Affine(0, 1)).y0 == pytest.approx(1.0)


def test_bsde_pure_drift(one_period):
    assert solve_bsde(one_period, 0.0, Affine(1, 0)).y0 == pytest.approx(1.0)


def test_f_expectation_linear_and_trivial():
    tree = binomial_tree(2, 1.0, 0.5)
    zeta = np.arange(tree.n, dtype=float)
    alpha = StoppingRule.at_level(tree, 0)
    beta = StoppingRule.terminal(tree)
    vals = f_expectation(tree, alpha, beta, zeta, zero())
    assert vals[0] == pytest.approx(zeta[3:].mean())
    assert f_expectation(tree, alpha, beta, 4.0, zero())[0] == pytest.approx(4.0)
    same = f_expectation(tree, beta, beta, zeta, Affine(1, 1))
    assert np.allclose(same[3:], zeta[3:])


def test_f_expectation_order():
    tree = binomial_tree(2)
    with pytest.raises(Exception):
        f_expectation(tree, StoppingRule.terminal(tree), StoppingRule.at_level(tree, 1), 0.0, zero())


def test_dominating_process_examples(one_period):
    X = LatticeProcess.constant(one_period, -1.5)
    D = dominating_supermartingale(one_period, X, zero())
    assert np.allclose(D.inst, 3.0)
    D = dominating_supermartingale(one_period, LatticeProcess.zeros(one_period), Affine(1, 0))
    assert D.inst[0] == pytest.approx(2.0)


def test_stated_integrability_bound_counterexample():
    # f = 1, xi = 0: E sum h|f| = N*h, but the stated right side is 2(0 - N*h + N*h) = 0
    tree = binomial_tree(3, 1.0, 0.5)
    f = Affine(1.0, 0.0)
    b = integrability_bound(tree, solve_bsde(tree, 0.0, f), f, 0.0)
    assert b["lhs"][0] == pytest.approx(3.0)
    assert b["rhs_stated"][0] == pytest.approx(0.0)
    assert b["rhs_sharp"][0] == pytest.approx(3.0)


def test_sharp_integrability_bound_random(rng):
    tree = binomial_tree(3, 0.5, 0.4)
    for _ in range(20):
        f = Logistic(rng.uniform(-1, 1), rng.uniform(0, 3), rng.uniform(0.5, 4), rng.uniform(-1, 1))
        xi = rng.normal(size=tree.n) * 2
        b = integrability_bound(tree, solve_bsde(tree, xi, f), f, xi)
        assert np.all((b["lhs"] - b["rhs_sharp"])[b["nodes"]] <= 3e-12)
