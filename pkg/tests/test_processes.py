import numpy as np
import pytest

from rbsde.errors import InvariantError
from rbsde.filtration import binomial_tree, explicit_tree
from rbsde.processes import (FVProcess, LatticeProcess, check_supermartingale, jordan,
                             left_right_limits, mertens_decompose)


def chain3():
    nodes = [{"id": i, "parent": i - 1, "prob": 1.0} for i in range(4)]
    nodes[0]["parent"] = -1
    return explicit_tree(nodes)


def test_jordan_signwise_split():
    tree = chain3()
    K = FVProcess.from_increments(tree, [0, 1, -2, 3], np.zeros(4))
    kp, km = jordan(K)
    assert kp.star[1:].tolist() == [1, 0, 3]
    assert km.star[1:].tolist() == [0, 2, 0]


def test_jordan_zero():
    tree = chain3()
    kp, km = jordan(FVProcess.from_increments(tree, np.zeros(4), np.zeros(4)))
    assert not kp.inst.any() and not km.inst.any()


def test_jordan_both_channels_positive():
    tree = chain3()
    K = FVProcess.from_increments(tree, [0, 1, 0, 0], [0, 1, 0, 0])
    kp, km = jordan(K)
    assert kp.star[1] == 1 and kp.right[1] == 1
    assert not km.plus.any()


def test_supermartingale_check(one_period):
    M = LatticeProcess(one_period, [1.0, 2.0, 0.0])
    assert check_supermartingale(one_period, M)[0]
    X = LatticeProcess(one_period, [5.0, 0.0, 0.0], [5.0, 0.0, 0.0])
    assert check_supermartingale(one_period, X)[0]
    X = LatticeProcess(one_period, [0.0, 0.0, 0.0], [5.0, 0.0, 0.0])
    ok, worst, where = check_supermartingale(one_period, X)
    assert not ok and worst == 5.0 and where[0] == 0


def test_mertens_deterministic_drop(one_period):
    X = LatticeProcess(one_period, [5.0, 0.0, 0.0], [5.0, 0.0, 0.0])
    M, K = mertens_decompose(one_period, X)
    assert np.allclose(M.inst, 0.0)
    assert K.star[1] == 5.0 and K.star[2] == 5.0 and K.right[0] == 0.0


def test_mertens_martingale(one_period):
    X = LatticeProcess(one_period, [1.0, 2.0, 0.0])
    M, K = mertens_decompose(one_period, X)
    assert np.allclose(K.inst, 0.0) and np.allclose(K.plus, 0.0)
    assert np.allclose(M.inst, X.inst - 1.0)


def test_mertens_right_jump(one_period):
    X = LatticeProcess(one_period, [2.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    M, K = mertens_decompose(one_period, X)
    assert K.right[0] == 1.0 and K.star[1] == 0.0
    assert np.allclose(M.inst, 0.0)


def test_mertens_rejects_submartingale(one_period):
    with pytest.raises(InvariantError):
        mertens_decompose(one_period, LatticeProcess(one_period, [0.0, 2.0, 2.0]))


def test_mertens_reconstruction_random(rng):
    tree = binomial_tree(3, 1.0, 0.4)
    from rbsde.snell import envelope_arrays
    payoff = LatticeProcess(tree, rng.normal(size=tree.n), rng.normal(size=tree.n))
    yi, yp = envelope_arrays(tree, payoff, rng.normal(size=tree.n))
    S = LatticeProcess(tree, yi, yp)
    M, K = mertens_decompose(tree, S)
    rebuilt = M - K + yi[0]
    assert np.max(np.abs(rebuilt.inst - S.inst)) <= 1e-12
    assert K.is_increasing() and K.predictability_gap() <= 1e-12


def test_limits_constant(one_period):
    left, right = left_right_limits(LatticeProcess.constant(one_period, 2.0))
    assert np.all(left.inst == 2.0) and np.all(right.inst == 2.0)


def test_limits_read_off(one_period):
    X = LatticeProcess(one_period, [0.0, 0.0, 0.0], [5.0, 0.0, 0.0])
    left, right = left_right_limits(X)
    assert right.inst[0] == 5.0 and left.inst[1] == 5.0 and left.inst[0] == 0.0


def test_csv_roundtrip(one_period):
    X = LatticeProcess(one_period, [1.0, 2.0, 3.0], [1.5, 2.0, 3.0])
    back = LatticeProcess.from_csv(one_period, X.to_csv())
    assert np.array_equal(back.inst, X.inst) and np.array_equal(back.plus, X.plus)
