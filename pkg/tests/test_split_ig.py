from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_binary_dataset
from oracles import brute_force_ratio_gap, exact_min_ig, theorem_violations
from robust_trees.data import Dataset, RobustConfig, toy_split_dataset
from robust_trees.split_ig import (AdversarialCounts, CountState, adversary_prefers_left, best_split_ig, candidate_thresholds,
                                   find_adversarial_counts, gini_from_counts, gini_gain, ig_from_counts,
                                   info_gain, natural_score_ig, partition_split, ratio_gap,
                                   robust_score_ig, train_tree_ig)


@pytest.mark.parametrize("counts, want", [
    ((5, 5, 4, 1), 0.278),
    ((5, 5, 2, 3), 0.029),
    ((5, 5, 0, 2), 0.236),
    ((6, 6, 4, 2), 0.0817),
])
def test_information_gain_reference_values(counts, want):
    assert info_gain(CountState(*counts)) == pytest.approx(want, abs=1e-3)


def test_information_gain_zero_cases():
    assert info_gain(CountState(6, 6, 3, 3)) == 0.0
    assert info_gain(CountState(2, 2, 1, 1)) == 0.0
    assert info_gain(CountState(5, 5, 5, 5)) == 0.0  # empty right child


def test_gini_values():
    assert gini_gain(CountState(2, 2, 2, 0)) == pytest.approx(0.5)
    assert gini_gain(CountState(4, 2, 2, 1)) == pytest.approx(0.0, abs=1e-15)
    # by hand: parent 1/2; left (4,2) has 1 - (2/3)^2 - (1/3)^2 = 4/9 on 6 of 12,
    # right (2,4) the same; gain 1/2 - 4/9 = 1/18
    assert gini_gain(CountState(6, 6, 4, 2)) == pytest.approx(1 / 18, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 30), st.integers(0, 30), st.data())
def test_scores_in_range(N0, N1, data):
    if N0 + N1 == 0:
        N0 = 1
    n0 = data.draw(st.integers(0, N0))
    n1 = data.draw(st.integers(0, N1))
    ig = float(ig_from_counts(N0, N1, n0, n1))
    gi = float(gini_from_counts(N0, N1, n0, n1))
    assert -1e-12 <= ig <= 1 + 1e-12
    assert -1e-12 <= gi <= 0.5 + 1e-12


def test_adversary_predicate_examples():
    assert adversary_prefers_left(CountState(5, 5, 1, 3), 0)
    assert not adversary_prefers_left(CountState(5, 5, 3, 3), 0)
    assert adversary_prefers_left(CountState(5, 5, 3, 1), 1)
    with pytest.raises(ValueError):
        adversary_prefers_left(CountState(5, 5, 3, 1), 2)


@pytest.mark.parametrize("scorer", [ig_from_counts, gini_from_counts], ids=["info_gain", "gini"])
def test_move_predicate_always_lowers_score(scorer):
    checked, bad = theorem_violations(scorer, limit=12)
    assert checked > 0
    assert bad == []


def test_adversarial_counts_examples():
    assert find_adversarial_counts(5, 5, 1, 3, 0, 0) == AdversarialCounts(0, 0)
    adv = find_adversarial_counts(5, 5, 1, 3, 2, 0)
    assert (adv.dn0, adv.dn1) == (2, 0)
    assert ratio_gap(5, 5, 1 + adv.dn0, 3 + adv.dn1) == 0
    with pytest.raises(ValueError):
        find_adversarial_counts(5, 5, 4, 0, 2, 0)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 25), st.integers(1, 25), st.data())
def test_adversarial_counts_match_grid_minimum(N0, N1, data):
    a0 = data.draw(st.integers(0, min(12, N0)))
    a1 = data.draw(st.integers(0, min(12, N1)))
    n0o = data.draw(st.integers(0, N0 - a0))
    n1o = data.draw(st.integers(0, N1 - a1))
    adv = find_adversarial_counts(N0, N1, n0o, n1o, a0, a1)
    assert 0 <= adv.dn0 <= a0 and 0 <= adv.dn1 <= a1
    got = abs(Fraction(n0o + adv.dn0, N0) - Fraction(n1o + adv.dn1, N1))
    assert got == brute_force_ratio_gap(N0, N1, n0o, n1o, a0, a1)


def test_partition_follows_interval_conventions():
    X = np.array([[0.2], [0.25], [0.45], [0.5], [0.75], [0.76]])
    ds = Dataset(X, np.array([0, 1, 0, 1, 0, 1.0]))
    p = partition_split(ds, np.arange(6), 0, 0.5, 0.25)
    # the eta +/- eps endpoints are closed; eta itself is on the right
    assert p.left_certain.tolist() == [0]
    assert p.ambiguity_left.tolist() == [1, 2]
    assert p.ambiguity_right.tolist() == [3, 4]
    assert p.right_certain.tolist() == [5]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 0.5))
def test_partition_is_disjoint_cover(seed, eps):
    rng = np.random.default_rng(seed)
    ds = random_binary_dataset(rng, n=25, d=2, levels=10)
    inst = np.sort(rng.choice(25, size=15, replace=False))
    eta = float(rng.choice(candidate_thresholds(ds.features[inst, 1]))) \
        if np.unique(ds.features[inst, 1]).size > 1 else 0.5
    p = partition_split(ds, inst, 1, eta, eps)
    parts = [p.left_certain, p.ambiguity_left, p.ambiguity_right, p.right_certain]
    joined = np.concatenate(parts)
    assert sorted(joined.tolist()) == inst.tolist()
    if eps == 0:
        assert p.ambiguity.size == 0


def _random_split_instance(rng):
    """Small one-node problem with at most 12 ambiguous points."""
    n = int(rng.integers(4, 30))
    ds = random_binary_dataset(rng, n=n, d=2, levels=int(rng.integers(5, 40)))
    inst = np.arange(n)
    j = int(rng.integers(2))
    cands = candidate_thresholds(ds.features[:, j])
    if cands.size == 0:
        return None
    eta = float(rng.choice(cands))
    eps = float(rng.uniform(0, 0.3))
    if partition_split(ds, inst, j, eta, eps).ambiguity.size > 12:
        return None
    return ds, inst, j, eta, eps


@pytest.mark.parametrize("kind", ["info_gain", "gini"])
def test_robust_score_sandwich(kind):
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 300:
        inst = _random_split_instance(rng)
        if inst is None:
            continue
        ds, idx, j, eta, eps = inst
        rs = robust_score_ig(j, eta, idx, ds, RobustConfig(eps), kind)
        nat = natural_score_ig(j, eta, idx, ds, kind)
        lo = exact_min_ig(ds, idx, j, eta, eps, kind)
        assert lo - 1e-12 <= rs <= nat + 1e-12
        checked += 1


def test_robust_score_equals_natural_at_zero_eps():
    rng = np.random.default_rng(2)
    ds = random_binary_dataset(rng, n=40, d=3)
    idx = np.arange(40)
    for j in range(3):
        for eta in candidate_thresholds(ds.features[:, j]):
            assert robust_score_ig(j, eta, idx, ds, RobustConfig(0.0)) == natural_score_ig(j, eta, idx, ds)


def test_vector_epsilon_is_per_feature():
    rng = np.random.default_rng(5)
    ds = random_binary_dataset(rng, n=30, d=2, levels=10)
    idx = np.arange(30)
    eta = float(candidate_thresholds(ds.features[:, 0])[3])
    vec = RobustConfig([0.2, 0.0])
    assert robust_score_ig(0, eta, idx, ds, vec) == robust_score_ig(0, eta, idx, ds, RobustConfig(0.2))
    eta1 = float(candidate_thresholds(ds.features[:, 1])[3])
    assert robust_score_ig(1, eta1, idx, ds, vec) == natural_score_ig(1, eta1, idx, ds)


def test_scan_matches_pointwise_scores():
    # the vectorized per-feature scan must agree with the one-split functions
    rng = np.random.default_rng(8)
    for _ in range(20):
        ds = random_binary_dataset(rng, n=30, d=2, levels=12)
        cfg = RobustConfig(float(rng.uniform(0, 0.3)))
        split = best_split_ig(np.arange(30), ds, cfg, robust=True)
        best = max((robust_score_ig(j, eta, np.arange(30), ds, cfg), j, eta)
                   for j in range(2) for eta in candidate_thresholds(ds.features[:, j]))
        if split is None:
            assert best[0] <= 1e-12
        else:
            assert split.score == pytest.approx(best[0], abs=1e-12)


def test_best_split_separable():
    ds = Dataset(np.array([[0.1], [0.2], [0.8], [0.9]]), np.array([0, 0, 1, 1.0]))
    s = best_split_ig(np.arange(4), ds, RobustConfig(0.0), robust=False)
    assert (s.feature, s.threshold) == (0, pytest.approx(0.5))
    assert s.score == pytest.approx(1.0)
    assert s.left.tolist() == [0, 1] and s.right.tolist() == [2, 3]


def test_best_split_none_when_pure():
    ds = Dataset(np.random.default_rng(0).random((6, 2)), np.ones(6))
    assert best_split_ig(np.arange(6), ds, RobustConfig(0.0)) is None


def test_tie_break_lowest_feature():
    X = np.array([[0.1, 0.1], [0.2, 0.2], [0.8, 0.8], [0.9, 0.9]])
    ds = Dataset(X, np.array([0, 0, 1, 1.0]))
    assert best_split_ig(np.arange(4), ds, RobustConfig(0.0)).feature == 0


def test_toy_set_feature_choice():
    ds = toy_split_dataset()
    nat = best_split_ig(np.arange(10), ds, RobustConfig(0.1), robust=False)
    rob = best_split_ig(np.arange(10), ds, RobustConfig(0.1), robust=True)
    assert nat.feature == 1 and nat.threshold == pytest.approx(0.5)
    assert nat.score == pytest.approx(0.278, abs=1e-3)
    assert rob.feature == 0 and rob.threshold == pytest.approx(0.3)
    assert rob.score == pytest.approx(0.236, abs=1e-3)


def test_tree_on_pure_data_is_leaf():
    ds = Dataset(np.random.default_rng(0).random((5, 2)), np.zeros(5))
    t = train_tree_ig(ds, RobustConfig(0.1), max_depth=3)
    assert t.node_count == 1 and t.value[0] == 0


def test_depth_one_separable_stump():
    ds = Dataset(np.array([[0.1], [0.2], [0.8], [0.9]]), np.array([0, 0, 1, 1.0]))
    t = train_tree_ig(ds, max_depth=1, robust=False)
    assert t.feature[0] == 0 and t.threshold[0] == pytest.approx(0.5)
    assert t.value[t.left[0]] == 0 and t.value[t.right[0]] == 1


def test_majority_tie_goes_to_zero():
    ds = Dataset(np.array([[0.5], [0.5]]), np.array([0, 1.0]))
    t = train_tree_ig(ds, max_depth=2)
    assert t.node_count == 1 and t.value[0] == 0


def test_invalid_arguments():
    ds = toy_split_dataset()
    with pytest.raises(ValueError):
        train_tree_ig(ds, max_depth=0)
    with pytest.raises(ValueError):
        best_split_ig(np.arange(10), ds, RobustConfig(0.1), score_kind="entropy")
    with pytest.raises(ValueError):
        train_tree_ig(Dataset(ds.features, ds.labels * 2), max_depth=1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["info_gain", "gini"]))
def test_zero_eps_robust_tree_equals_natural(seed, kind):
    rng = np.random.default_rng(seed)
    ds = random_binary_dataset(rng, n=int(rng.integers(5, 60)), d=int(rng.integers(1, 5)), levels=20)
    a = train_tree_ig(ds, RobustConfig(0.0), 4, kind, robust=True)
    b = train_tree_ig(ds, RobustConfig(0.0), 4, kind, robust=False)
    assert a.same_structure(b)


def test_robust_tree_children_use_natural_assignment():
    ds = toy_split_dataset()
    t = train_tree_ig(ds, RobustConfig(0.1), max_depth=1)
    left = ds.features[:, 0] < t.threshold[0]
    # leaves hold the class balance of the unperturbed children
    assert t.proba[t.left[0]].tolist() == [0.0, 1.0]
    assert left.sum() == 2
