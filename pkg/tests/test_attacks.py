import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_ensemble, random_tree
from robust_trees.attacks import (AttackResult, CellGrid, CellGuardError, REPORT_FIELDS, boundary_distance,
                                  cheng_attack_linf, evaluate_robustness, exact_attack_small, papernot_attack)
from robust_trees.data import Dataset, RobustConfig
from robust_trees.split_ig import train_tree_ig
from robust_trees.tree_model import Ensemble, TreeBuilder, constant_tree, predict_label, predict_label_batch, stump


def stump_model(eta=0.5):
    return Ensemble([stump(0, eta, 0.0, 1.0)], kind="single-tree")


def build(spec):
    """Tree from nested ``(feature, threshold, left, right)`` tuples; ints are leaves."""
    b = TreeBuilder()

    def grow(node):
        if not isinstance(node, tuple):
            return b.add_leaf(node)
        f, t, left, right = node
        i = b.add_split(f, t)
        b.set_children(i, grow(left), grow(right))
        return i

    grow(spec)
    return b.build()


def depth3_tree():
    return build((0, 0.4,
                  (2, 0.5, (1, 0.3, 0, 1), (2, 0.6, 0, 0)),
                  (0, 0.7, (1, 0.8, 1, 0), (2, 0.2, 0, 1))))


def test_papernot_stump():
    res = papernot_attack(stump_model(), np.array([0.3]), 0)
    assert res.success
    assert res.adversarial_x.tolist() == [0.5]
    assert res.linf == pytest.approx(0.2)


def test_papernot_stump_from_right_uses_delta():
    res = papernot_attack(stump_model(), np.array([0.8]), 1)
    assert res.adversarial_x[0] == pytest.approx(0.5 - 1e-6, abs=1e-15)


def test_papernot_constant_tree_fails():
    res = papernot_attack(constant_tree(0.0), np.array([0.3]), 0)
    assert not res.success and res.adversarial_x is None


def test_papernot_depth3_manual_path():
    t = depth3_tree()
    x = np.array([0.1, 0.1, 0.1])  # path: x0<0.4, x2<0.5, x1<0.3 -> leaf 0
    assert predict_label(Ensemble([t], kind="single-tree"), x) == 0
    res = papernot_attack(t, x, 0)
    # the sibling leaf (x1 >= 0.3) is the nearest different-label leaf
    assert res.success
    assert res.adversarial_x.tolist() == [0.1, 0.3, 0.1]
    assert res.linf == pytest.approx(0.2)


def test_papernot_rejects_multi_tree_and_wrong_label():
    ens = Ensemble([stump(0, 0.5, -1, 1)] * 2)
    with pytest.raises(ValueError):
        papernot_attack(ens, np.array([0.3]), 0)
    with pytest.raises(ValueError):
        papernot_attack(stump_model(), np.array([0.3]), 1)


def test_boundary_distance_stump():
    m = stump_model()
    assert boundary_distance(m, np.array([0.3]), 0, np.array([1.0])) == pytest.approx(0.2, abs=1e-5)
    assert boundary_distance(m, np.array([0.3]), 0, np.array([-1.0])) == math.inf


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_boundary_distance_brackets_the_flip(seed):
    rng = np.random.default_rng(seed)
    ens, d = random_ensemble(rng, max_trees=3)
    x = rng.random(d)
    y = predict_label(ens, x)
    theta = rng.normal(size=d)
    lam = boundary_distance(ens, x, y, theta)
    if math.isinf(lam):
        return
    direction = theta / np.abs(theta).max()
    point = lambda s: np.clip(x + s * direction, 0, 1)
    assert predict_label(ens, point(lam + 2e-5)) != y or predict_label(ens, point(lam)) != y
    assert predict_label(ens, point(max(lam - 2e-5, 0))) == y
    # positive rescaling of the direction changes nothing
    assert boundary_distance(ens, x, y, 7.5 * theta) == lam


def test_cheng_stump_converges():
    res = cheng_attack_linf(stump_model(), np.array([0.3]), 0, budget=2000, seed=1)
    assert res.success
    assert res.linf == pytest.approx(0.2, abs=1e-3)


def test_cheng_is_deterministic_given_seed():
    rng = np.random.default_rng(3)
    ens, d = random_ensemble(rng, max_trees=4, max_d=3)
    x = rng.random(d)
    y = predict_label(ens, x)
    a = cheng_attack_linf(ens, x, y, budget=1500, seed=42)
    b = cheng_attack_linf(ens, x, y, budget=1500, seed=42)
    assert a.success == b.success and a.queries == b.queries
    if a.success:
        assert a.adversarial_x.tolist() == b.adversarial_x.tolist()


def test_cheng_finds_narrow_flip_band():
    # label 1 only on [0.61, 0.62): doubling brackets from 0.1 step over it
    model = Ensemble([build((0, 0.61, 0, (0, 0.62, 1, 0)))], kind="single-tree")
    x = np.array([0.1])
    res = cheng_attack_linf(model, x, 0, budget=3000, seed=0)
    assert res.success
    assert res.linf == pytest.approx(0.51, abs=1e-6)


def test_cheng_constant_model_fails():
    res = cheng_attack_linf(Ensemble([constant_tree(1.0)]), np.array([0.3, 0.3]), 1, budget=500)
    assert not res.success


def test_exact_stump():
    res = exact_attack_small(stump_model(), np.array([0.3]), 0)
    assert res.linf == pytest.approx(0.2, abs=1e-12)
    assert res.adversarial_x.tolist() == [0.5]
    res = exact_attack_small(stump_model(), np.array([0.9]), 1)
    assert res.linf == pytest.approx(0.4 + 1e-9, abs=1e-15)


def test_exact_constant_fails():
    assert not exact_attack_small(Ensemble([constant_tree(0.5)]), np.array([0.1]), 1).success


def test_exact_guard_refuses():
    trees = [stump(j, t, -1.0, 1.0) for j in range(3) for t in np.linspace(0.01, 0.99, 99)]
    ens = Ensemble(trees)
    assert CellGrid.from_model(ens).cell_count() == 100 ** 3
    with pytest.raises(CellGuardError):
        exact_attack_small(ens, np.full(3, 0.5), predict_label(ens, np.full(3, 0.5)), guard=10 ** 5)


def _result_is_consistent(ens, x, y, res):
    if not res.success:
        return
    a = res.adversarial_x
    assert np.all((a >= 0) & (a <= 1))
    assert predict_label(ens, a) != y
    diff = a - x
    assert res.linf == pytest.approx(np.abs(diff).max(), abs=1e-15)
    assert res.linf <= res.l2 + 1e-15 <= res.l1 + 2e-15


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_is_lower_bound_for_every_attack(seed):
    rng = np.random.default_rng(seed)
    single = rng.random() < 0.4
    ens, d = random_ensemble(rng, max_trees=3, max_depth=2, kind="single-tree" if single else "gbdt-binary")
    for _ in range(3):
        x = rng.random(d)
        y = predict_label(ens, x)
        ex = exact_attack_small(ens, x, y)
        ch = cheng_attack_linf(ens, x, y, budget=1500, seed=int(rng.integers(1 << 30)))
        for res in (ex, ch):
            _result_is_consistent(ens, x, y, res)
        if ch.success:
            assert ex.success and ex.linf <= ch.linf + 1e-9
        if len(ens.trees) == 1:
            pa = papernot_attack(ens, x, y)
            _result_is_consistent(ens, x, y, pa)
            if pa.success:
                assert ex.linf <= pa.linf + 1e-9


def test_exact_matches_dense_grid_search():
    # 2-D check: no grid point flips the label closer than the oracle says
    rng = np.random.default_rng(5)
    ens = Ensemble([random_tree(rng, 2, 2) for _ in range(3)], kind="gbdt-binary")
    x = np.array([0.37, 0.61])
    y = predict_label(ens, x)
    res = exact_attack_small(ens, x, y)
    grid = np.linspace(0, 1, 401)
    pts = np.array([[a, b] for a in grid for b in grid])
    flips = pts[predict_label_batch(ens, pts) != y]
    if flips.size:
        assert res.success
        assert res.linf <= np.abs(flips - x).max(axis=1).min() + 1e-9
    else:
        assert not res.success


def test_report_averages_and_csv():
    m = stump_model()
    X = np.array([[0.3], [0.1], [0.45], [0.9]])
    y = np.array([0, 0, 0, 0])
    rep = evaluate_robustness(m, X, y, attack="exact")
    assert rep.accuracy == 0.75
    assert rep.n_attacked == 3 and rep.success_rate == 1.0
    assert rep.avg_linf == pytest.approx((0.2 + 0.4 + 0.05) / 3)
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",") == REPORT_FIELDS
    assert len(lines) == 5
    assert lines[4].split(",")[3] == "none"


def test_report_when_nothing_is_correct():
    rep = evaluate_robustness(stump_model(), np.array([[0.9], [0.8]]), np.array([0, 0]))
    assert rep.n_attacked == 0
    assert "no correctly classified examples" in rep.summary()
    assert math.isnan(rep.avg_linf)


def test_report_is_independent_of_threads():
    rng = np.random.default_rng(8)
    ens, d = random_ensemble(rng, max_trees=4, max_d=3)
    X = rng.random((12, d))
    y = np.array([predict_label(ens, x) for x in X])
    one = evaluate_robustness(ens, X, y, budget=800, seed=3, threads=1).to_csv()
    four = evaluate_robustness(ens, X, y, budget=800, seed=3, threads=4).to_csv()
    assert one == four


def test_evaluate_rejects_unknown_attack_and_guard():
    with pytest.raises(ValueError):
        evaluate_robustness(stump_model(), np.array([[0.3]]), np.array([0]), attack="milp")


def test_robust_tree_is_harder_to_attack_on_margin_data():
    # one feature separates with a wide margin, the other is accurate but tight
    rng = np.random.default_rng(0)
    n = 120
    y = (rng.random(n) < 0.5).astype(float)
    wide = np.where(y == 1, rng.uniform(0.65, 1.0, n), rng.uniform(0.0, 0.35, n))
    tight = np.where(y == 1, rng.uniform(0.5, 0.56, n), rng.uniform(0.44, 0.5, n))
    wide[:6] = 1 - wide[:6]  # a few errors make the tight feature the natural pick
    X = np.column_stack([wide, tight])
    ds = Dataset(X, y)
    nat = train_tree_ig(ds, RobustConfig(0.0), 3, robust=False)
    rob = train_tree_ig(ds, RobustConfig(0.1), 3, robust=True)
    rn = evaluate_robustness(nat, X, y, attack="exact")
    rr = evaluate_robustness(rob, X, y, attack="exact")
    assert rr.avg_linf > rn.avg_linf


def test_attack_result_norms():
    r = AttackResult.found(np.zeros(3), np.array([0.1, -0.2, 0.0]), 5, "x")
    assert (r.linf, r.l1) == (pytest.approx(0.2), pytest.approx(0.3))
    assert r.l2 == pytest.approx(math.sqrt(0.05))
