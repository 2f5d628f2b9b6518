import math

import numpy as np
import pytest

from rtlab.errors import ContractError
from rtlab.stats import (
    Bolding, TrialSet, aggregate, bolding_rule, mean_per_class, r_squared, top1,
    welch_t_test,
)
from oracles import pearson_r2_reference, welch_reference


def test_top1_basic():
    assert top1([1, 2, 3], [1, 2, 3]) == 1.0
    assert top1([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75


def test_top1_random_matches_count_oracle():
    rng = np.random.default_rng(0)
    preds = rng.integers(0, 5, size=200)
    labels = rng.integers(0, 5, size=200)
    count = sum(1 for p, l in zip(preds, labels) if p == l)
    assert top1(preds, labels) == count / 200


def test_top1_validation():
    with pytest.raises(ContractError):
        top1([1, 2], [1])
    with pytest.raises(ContractError):
        top1([], [])


def test_mean_per_class_balanced_equals_top1():
    rng = np.random.default_rng(1)
    labels = np.repeat(np.arange(4), 25)
    preds = rng.integers(0, 4, size=100)
    assert mean_per_class(preds, labels, 4) == pytest.approx(top1(preds, labels), abs=1e-12)


def test_mean_per_class_imbalanced_example():
    labels = np.array([0, 0, 0, 1])
    preds = np.array([0, 0, 0, 0])
    assert top1(preds, labels) == 0.75
    assert mean_per_class(preds, labels, 2) == 0.5


def test_mean_per_class_matches_tally_oracle():
    rng = np.random.default_rng(2)
    labels = np.concatenate([np.zeros(50, int), np.ones(10, int), np.full(3, 2)])
    preds = rng.integers(0, 3, size=labels.size)
    per_class = []
    for c in range(3):
        hit = total = 0
        for p, l in zip(preds, labels):
            if l == c:
                total += 1
                hit += p == c
        per_class.append(hit / total)
    assert mean_per_class(preds, labels, 3) == pytest.approx(sum(per_class) / 3, abs=1e-15)


def test_mean_per_class_absent_class_named():
    with pytest.raises(ContractError, match="class 2"):
        mean_per_class(np.array([0, 1]), np.array([0, 1]), 3)


def test_balanced_property_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(25):
        k = int(rng.integers(2, 6))
        per = int(rng.integers(3, 30))
        labels = rng.permutation(np.repeat(np.arange(k), per))
        preds = rng.integers(0, k, size=labels.size)
        assert mean_per_class(preds, labels, k) == pytest.approx(top1(preds, labels), abs=1e-12)


# -- Welch ---------------------------------------------------------------------

def scaled(vals):
    # observations must be accuracies in [0,1]; scale reference cases down
    return tuple(v / 100.0 for v in vals)


def test_welch_identical_sets():
    a = TrialSet("a", (0.5, 0.6, 0.7))
    b = TrialSet("b", (0.5, 0.6, 0.7))
    res = welch_t_test(a, b)
    assert res.t == 0.0
    assert res.p == 1.0
    assert not res.significant_at_95


def test_welch_separated_sets_match_reference():
    a = TrialSet("a", scaled([3.0, 4.0, 5.0]))
    b = TrialSet("b", scaled([13.0, 14.0, 15.0]))
    res = welch_t_test(a, b)
    t_ref, df_ref, p_ref = welch_reference(a.observations, b.observations)
    assert res.t == pytest.approx(t_ref, abs=1e-9)
    assert res.df == pytest.approx(df_ref, abs=1e-9)
    assert res.p == pytest.approx(p_ref, abs=1e-12)
    assert res.significant_at_95


def test_welch_antisymmetry():
    rng = np.random.default_rng(4)
    a = TrialSet("a", tuple(rng.uniform(0.4, 0.6, size=5)))
    b = TrialSet("b", tuple(rng.uniform(0.5, 0.7, size=4)))
    ab = welch_t_test(a, b)
    ba = welch_t_test(b, a)
    assert ab.t == -ba.t
    assert ab.p == ba.p
    assert ab.df == ba.df


def test_welch_random_instances_match_high_precision_reference():
    rng = np.random.default_rng(5)
    for _ in range(100):
        na = int(rng.integers(2, 12))
        nb = int(rng.integers(2, 12))
        a = rng.uniform(0.0, 1.0, size=na)
        b = rng.uniform(0.0, 1.0, size=nb)
        res = welch_t_test(TrialSet("a", tuple(a)), TrialSet("b", tuple(b)))
        t_ref, df_ref, p_ref = welch_reference(a, b)
        assert res.t == pytest.approx(t_ref, abs=1e-6)
        assert res.p == pytest.approx(p_ref, abs=1e-6)


def test_welch_zero_variance_conventions():
    same = welch_t_test(TrialSet("a", (0.5, 0.5)), TrialSet("b", (0.5, 0.5)))
    assert same.p == 1.0 and not same.significant_at_95
    apart = welch_t_test(TrialSet("a", (0.4, 0.4)), TrialSet("b", (0.6, 0.6)))
    assert apart.p == 0.0 and apart.significant_at_95
    assert math.isinf(apart.t) and apart.t < 0


def test_welch_insufficient_observations():
    with pytest.raises(ContractError):
        welch_t_test(TrialSet("a", (0.5,)), TrialSet("b", (0.5, 0.6)))


def test_trial_set_validation():
    with pytest.raises(ContractError):
        TrialSet("x", ())
    with pytest.raises(ContractError):
        TrialSet("x", (1.5,))


# -- bolding ---------------------------------------------------------------------

def test_bolding_identical_sets_bold_both():
    a = TrialSet("a", (0.5, 0.6))
    assert bolding_rule(a, TrialSet("b", (0.5, 0.6))) is Bolding.BOLD_BOTH


def test_bolding_separated_sets_bold_higher():
    a = TrialSet("a", scaled([3.0, 4.0, 5.0]))
    b = TrialSet("b", scaled([13.0, 14.0, 15.0]))
    assert bolding_rule(a, b) is Bolding.BOLD_B
    assert bolding_rule(b, a) is Bolding.BOLD_A


def test_bolding_equal_means_unequal_variance_bold_both():
    a = TrialSet("a", (0.4, 0.6))
    b = TrialSet("b", (0.3, 0.7))
    assert bolding_rule(a, b) is Bolding.BOLD_BOTH


def test_bolding_never_bolds_lower_mean_alone():
    rng = np.random.default_rng(6)
    for _ in range(50):
        a = TrialSet("a", tuple(rng.uniform(0, 1, size=4)))
        b = TrialSet("b", tuple(rng.uniform(0, 1, size=4)))
        verdict = bolding_rule(a, b)
        if verdict is Bolding.BOLD_A:
            assert a.mean > b.mean
        elif verdict is Bolding.BOLD_B:
            assert b.mean > a.mean


# -- R^2 ---------------------------------------------------------------------------

def test_r_squared_perfect_line():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert r_squared(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-12)


def test_r_squared_reference_accuracy_rows():
    x = [77.37, 77.32, 73.66, 65.26, 64.25, 60.97]
    y = [97.84, 97.47, 96.08, 95.86, 95.82, 95.55]
    assert r_squared(x, y) == pytest.approx(0.79, abs=0.01)
    x2 = [66.12, 65.92, 56.78, 50.05, 42.87, 41.03]
    y2 = [98.67, 98.22, 97.27, 96.91, 96.23, 95.99]
    assert r_squared(x2, y2) == pytest.approx(0.97, abs=0.01)


def test_r_squared_matches_high_precision_reference():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(3, 12))
        x = rng.normal(size=n)
        y = rng.normal(size=n) + 0.5 * x
        assert r_squared(x, y) == pytest.approx(pearson_r2_reference(x, y), abs=1e-12)


def test_r_squared_affine_invariance():
    rng = np.random.default_rng(8)
    x = rng.normal(size=8)
    y = rng.normal(size=8)
    base = r_squared(x, y)
    assert r_squared(3.0 * x + 2.0, y) == pytest.approx(base, abs=1e-12)
    assert r_squared(x, 0.5 * y - 7.0) == pytest.approx(base, abs=1e-12)


def test_r_squared_validation():
    with pytest.raises(ContractError):
        r_squared([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ContractError):
        r_squared([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


# -- aggregate -----------------------------------------------------------------------

def test_aggregate_single_observation_has_no_std():
    agg = aggregate(TrialSet("x", (0.5,)))
    assert agg.mean == 0.5
    assert agg.std is None


def test_aggregate_two_point_formula():
    agg = aggregate(TrialSet("x", (0.4, 0.6)))
    assert agg.mean == pytest.approx(0.5, abs=1e-15)
    assert agg.std == pytest.approx(math.sqrt(0.02), abs=1e-12)


def test_aggregate_matches_extended_precision():
    import mpmath

    rng = np.random.default_rng(9)
    obs = tuple(rng.uniform(0, 1, size=10))
    agg = aggregate(TrialSet("x", obs))
    with mpmath.workdps(50):
        vals = [mpmath.mpf(float(v)) for v in obs]
        mean = mpmath.fsum(vals) / len(vals)
        std = mpmath.sqrt(mpmath.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
    assert agg.mean == pytest.approx(float(mean), abs=1e-12)
    assert agg.std == pytest.approx(float(std), abs=1e-12)
