import numpy as np
import pytest

from rbsde.double import check_separation, solve_decoupled, solve_direct, solve_double, solve_fnm
from rbsde.errors import SeparationError
from rbsde.fexp import solve_bsde
from rbsde.filtration import binomial_tree, class_d_norm
from rbsde.generators import Affine, Logistic, zero
from rbsde.invariants import report
from rbsde.lower import solve_lower
from rbsde.processes import LatticeProcess


def cap_example(tree):
    L = LatticeProcess.zeros(tree)
    U = LatticeProcess(tree, [0.4, 2.0, 2.0])
    return [0.0, 2.0, 0.0], L, U


def test_separation_ok(one_period):
    ok, gap = check_separation(one_period, LatticeProcess.zeros(one_period),
                               LatticeProcess.constant(one_period, 1.0), 0.5)
    assert ok and gap == 1.0


def test_separation_violation_at_root(one_period):
    L = LatticeProcess(one_period, [2.0, 0.0, 0.0])
    U = LatticeProcess(one_period, [1.0, 5.0, 5.0])
    with pytest.raises(SeparationError) as exc:
        check_separation(one_period, L, U, 1.0)
    assert exc.value.gap == 1.0 and exc.value.node == 0 and exc.value.slot == "0"


def test_separation_terminal_leaf(one_period):
    L = LatticeProcess.zeros(one_period)
    U = LatticeProcess.constant(one_period, 1.0)
    with pytest.raises(SeparationError) as exc:
        check_separation(one_period, L, U, [0.0, 0.5, 3.0])
    assert exc.value.node == 2


def test_interior_data():
    tree = binomial_tree(2)
    L, U = LatticeProcess.zeros(tree), LatticeProcess.constant(tree, 1.0)
    sol = solve_decoupled(tree, 0.5, zero(), None, L, U)
    assert np.allclose(sol.Y.inst, 0.5) and np.allclose(sol.R.plus, 0.0)
    assert sol.diagnostics["iterations"] == 1


def test_upper_cap_example(one_period):
    xi, L, U = cap_example(one_period)
    for scheme in ("decoupled", "direct"):
        sol = solve_double(one_period, xi, zero(), None, L, U, scheme)
        assert sol.y0 == pytest.approx(0.4, abs=1e-12)
        assert sol.Rm.star[1] == pytest.approx(0.6, abs=1e-12)
        rep = report(one_period, sol, xi, None, L, U)
        assert rep["minimality_upper"] <= 1e-9 and rep["singularity_violation"] == 0.0


def test_far_upper_barrier_matches_lower(rng):
    tree = binomial_tree(3, 0.5, 0.4)
    L = LatticeProcess(tree, rng.uniform(-2, 1, tree.n), rng.uniform(-2, 1, tree.n))
    xi = np.abs(rng.normal(size=tree.n)) + 1
    f = Logistic(0.1, 1.0, 2.0, 0.0)
    U = LatticeProcess.constant(tree, 1e9)
    a = solve_decoupled(tree, xi, f, None, L, U)
    b = solve_lower(tree, xi, f, None, L, "picard")
    assert class_d_norm(tree, a.Y - b.Y) <= 1e-8


def test_direct_pinched():
    tree = binomial_tree(2, 0.5, 0.3)
    B = LatticeProcess.constant(tree, 1.5)
    sol = solve_direct(tree, 1.5, Affine(0.3, 1.0), None, B, B)
    assert np.allclose(sol.Y.inst, 1.5) and np.allclose(sol.Y.plus, 1.5)


def test_direct_inactive_is_bsde():
    tree = binomial_tree(3)
    xi = tree.labels()["k"]
    sol = solve_direct(tree, xi, Affine(0, 1), None, LatticeProcess.constant(tree, -1e9),
                       LatticeProcess.constant(tree, 1e9))
    assert np.allclose(sol.Y.inst, solve_bsde(tree, xi, Affine(0, 1)).Y.inst)


def test_fnm_ladder_converges(rng):
    tree = binomial_tree(2, 0.5, 0.5)
    L = LatticeProcess(tree, rng.uniform(-2, 0, tree.n))
    U = LatticeProcess(tree, rng.uniform(0.5, 2, tree.n))
    xi = rng.uniform(0, 0.5, tree.n)
    f = Logistic(0.3, 1.0, 2.0, 0.0)
    dec = solve_decoupled(tree, xi, f, None, L, U)
    fnm = solve_fnm(tree, xi, f, None, L, U, rho=lambda t: 1e6)
    assert class_d_norm(tree, dec.Y - fnm.Y) <= 1e-4
    assert len(fnm.diagnostics["ladder_y0"]) == 16


def test_decoupled_components_difference(rng):
    tree = binomial_tree(3)
    L = LatticeProcess(tree, rng.uniform(-2, 0, tree.n))
    U = L + rng.uniform(0, 2, tree.n)
    xi = L.inst + 0.5 * (U.inst - L.inst)
    sol = solve_decoupled(tree, xi, Logistic(0, 1, 1, 0), None, L, U)
    s1, s2 = sol.components
    assert np.allclose((s1.Y - s2.Y).inst, sol.Y.inst)
