import numpy as np
import pytest

from rbsde.errors import BudgetError, ValidationError
from rbsde.filtration import (CONTINUE, PASSED, STOP, STOP_PLUS, StoppingRule, binomial_tree,
                              build_chain, class_d_norm, count_rules, enumerate_stopping_rules,
                              explicit_tree, rule_codes)
from rbsde.processes import LatticeProcess


def three_children():
    nodes = [{"id": 0, "parent": -1}, {"id": 1, "parent": 0, "prob": 0.2},
             {"id": 2, "parent": 0, "prob": 0.3}, {"id": 3, "parent": 0, "prob": 0.5}]
    return explicit_tree(nodes)


def test_cond_expect_average(one_period):
    assert one_period.cond_expect({1: 2.0, 2: 0.0}, 0)[0] == pytest.approx(1.0)


def test_cond_expect_single_child(single_branch):
    assert single_branch.cond_expect([7.5], 0)[0] == 7.5


def test_cond_expect_dot_product():
    assert three_children().cond_expect([1.0, 2.0, 3.0], 0)[0] == pytest.approx(2.3, abs=1e-15)


def test_cond_expect_incomplete_section(one_period):
    with pytest.raises(ValidationError, match="incomplete section"):
        one_period.cond_expect({1: 2.0}, 0)


def test_probabilities_must_sum_to_one():
    with pytest.raises(ValidationError):
        explicit_tree([{"id": 0, "parent": -1}, {"id": 1, "parent": 0, "prob": 0.4},
                       {"id": 2, "parent": 0, "prob": 0.4}])


def test_binomial_layout():
    tree = binomial_tree(2, 0.5, 0.3)
    assert tree.n == 7 and tree.N == 2
    assert list(tree.level) == [0, 1, 1, 2, 2, 2, 2]
    assert tree.prob[1] == pytest.approx(0.3)
    assert tree.labels()["k"].tolist() == [0, 1, 0, 2, 1, 1, 0]
    assert tree.path_prob[tree.leaves].sum() == pytest.approx(1.0)


def test_class_d_norm_constant(one_period):
    X = LatticeProcess.constant(one_period, -3.0)
    assert class_d_norm(one_period, X) == pytest.approx(3.0)


def test_class_d_norm_one_period(one_period):
    X = LatticeProcess(one_period, [0.0, 2.0, 0.0])
    assert class_d_norm(one_period, X) == pytest.approx(1.0)
    X = LatticeProcess(one_period, [3.0, 2.0, 0.0])
    assert class_d_norm(one_period, X) == pytest.approx(3.0)


def test_class_d_norm_sees_right_limits(one_period):
    X = LatticeProcess(one_period, [0.0, 0.0, 0.0], [5.0, 0.0, 0.0])
    assert class_d_norm(one_period, X) == 5.0
    assert class_d_norm(one_period, X, kind="plain") == 0.0


def test_rule_counts(single_branch, one_period):
    assert count_rules(single_branch, "plain") == 2
    assert count_rules(single_branch, "system") == 3
    assert count_rules(one_period, "plain") == 2
    assert len(list(enumerate_stopping_rules(one_period, "plain"))) == 2
    assert len(rule_codes(one_period, "system")) == 3


def test_rule_count_matches_enumeration():
    tree = binomial_tree(3)
    for kind in ("plain", "system"):
        rules = list(enumerate_stopping_rules(tree, kind))
        assert len(rules) == count_rules(tree, kind)
        assert len(set(rules)) == len(rules)


def test_rule_cap():
    with pytest.raises(BudgetError, match="oracle size limit"):
        rule_codes(binomial_tree(3), "system", max_rules=10)


def test_canonical_order_starts_with_stop(one_period):
    codes = rule_codes(one_period, "system")
    assert codes[0][0] == STOP and codes[1][0] == STOP_PLUS and codes[2][0] == CONTINUE


def test_invalid_rules(one_period):
    with pytest.raises(ValidationError):
        StoppingRule(one_period, [STOP_PLUS, PASSED, PASSED], "plain")
    with pytest.raises(ValidationError):
        StoppingRule(one_period, [CONTINUE, PASSED, STOP], "plain")
    with pytest.raises(ValidationError):
        StoppingRule(one_period, [STOP, STOP, PASSED], "plain")


def test_chain_zero_load():
    tree = binomial_tree(3)
    chain = build_chain(tree, [1.0, 2.0], np.zeros(tree.n))
    T = StoppingRule.terminal(tree)
    assert all(rule == T for rule in chain.rules)


def test_chain_linear_load():
    tree = binomial_tree(3)
    chain = build_chain(tree, [1.0, 2.0, 5.0], np.ones(tree.n))
    assert len(chain) == 3
    for k, c in enumerate([1, 2, 3]):
        assert chain[k] == StoppingRule.at_level(tree, c)


def test_chain_path_dependent_load():
    tree = binomial_tree(2)
    load = np.where(tree.labels()["k"] > 0, 1.0, 0.0)
    load[tree.level == 2] = 0.0
    load[np.array([3, 4])] = 0.0
    # up-branch node 1 carries load 1, the down branch accrues nothing
    chain = build_chain(tree, [1.0], load)
    slots = chain[0].slots()
    assert slots[1] == 2 and chain[0].codes[1] == STOP
    assert all(slots[v] == 4 for v in (5, 6))


def test_chain_thresholds_must_increase():
    with pytest.raises(ValidationError):
        build_chain(binomial_tree(2), [2.0, 1.0], np.ones(7))


def test_early_terminal_time():
    tree = binomial_tree(2)
    flags = np.zeros(tree.n, bool)
    flags[1] = True
    tree.set_terminal(flags)
    assert tree.at_T[1] and tree.after_T[3] and tree.after_T[4]
    assert count_rules(tree, "system") == 1 + 1 + (1 * 3)
