import numpy as np
import pytest

from rbsde.errors import BudgetError
from rbsde.filtration import binomial_tree
from rbsde.generators import Affine, zero
from rbsde.lower import solve_lower
from rbsde.oracle import OracleBudget, oracle_game, oracle_optimal_stopping, pair_values
from rbsde.processes import LatticeProcess
from rbsde.snell import snell_envelope


def test_optimal_stopping_matches_snell(rng):
    tree = binomial_tree(3, 1.0, 0.3)
    payoff = LatticeProcess(tree, rng.normal(size=tree.n), rng.normal(size=tree.n))
    term = rng.normal(size=tree.n)
    val, rule = oracle_optimal_stopping(tree, payoff, term, zero())
    assert val == pytest.approx(snell_envelope(tree, payoff, term).value, abs=1e-12)
    assert rule.kind == "system"


def test_optimal_stopping_with_generator(one_period):
    L = LatticeProcess(one_period, [2.0, -5.0, -5.0], [0.0, -5.0, -5.0])
    val, _ = oracle_optimal_stopping(one_period, L, [0.0, 3.0, 1.0], Affine(0, 1))
    assert val == pytest.approx(2.0)
    sol = solve_lower(one_period, [0.0, 3.0, 1.0], Affine(0, 1), None, L, "picard")
    assert sol.y0 == pytest.approx(val)


def test_pair_payoffs(one_period):
    L, U = LatticeProcess.zeros(one_period), LatticeProcess(one_period, [0.4, 2.0, 2.0])
    g = oracle_game(one_period, [0.0, 2.0, 0.0], zero(), L, U)
    J = g["matrix"]
    assert J.shape == (3, 3)
    # maximizer stops at 0 first: receives L_0 = 0 whatever the minimizer does (earlier slot wins)
    assert np.allclose(J[0], [0.0, 0.0, 0.0])
    # both wait to T: E xi = 1
    assert J[2, 2] == pytest.approx(1.0)
    again = pair_values(one_period, zero(), [0.0, 2.0, 0.0], L, U, g["codes_a"], g["codes_b"])
    assert np.array_equal(again, J)


def test_budget():
    tree = binomial_tree(3)
    with pytest.raises(BudgetError, match="oracle size limit"):
        OracleBudget(max_pairs=100).check_pairs(tree, "system", "system")
    with pytest.raises(ValueError):
        OracleBudget(max_rules=0)
