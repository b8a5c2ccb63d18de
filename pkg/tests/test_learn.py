import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subphenotype.learn import (
    ForestModel,
    GbdtModel,
    LogisticModel,
    accuracy,
    auroc,
    ensemble_rank,
    f_score,
    feature_importance,
    load_model,
    logistic_gradient,
    logistic_loss,
    macro_f_score,
    model_from_json,
    model_to_json,
    predict,
    save_model,
    train_forest,
    train_gbdt,
    train_logreg,
    train_test_split,
    train_tree,
)


def brute_auroc(y, s):
    pos = [v for v, t in zip(s, y) if t == 1]
    neg = [v for v, t in zip(s, y) if t == 0]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))


def brute_root_split(X, g, h, lam):
    """Exhaustive search over every feature and midpoint threshold."""
    G, H = g.sum(), h.sum()
    best = (-np.inf, None, None)
    for j in range(X.shape[1]):
        u = np.unique(X[:, j])
        for t in 0.5 * (u[:-1] + u[1:]):
            left = X[:, j] <= t
            gl, hl = g[left].sum(), h[left].sum()
            gain = 0.5 * (gl**2 / (hl + lam) + (G - gl) ** 2 / (H - hl + lam) - G**2 / (H + lam))
            if best[1] is None or gain > best[0] + 1e-12 * max(1.0, abs(best[0])):
                best = (gain, j, t)
    return best


def blobs(seed=0, n=200, d=5, shift=3.0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    X = rng.normal(size=(n, d))
    X[:, 0] += shift * y
    return X, y


# --- splitting ---------------------------------------------------------------------------


def test_stratified_split_counts():
    y = np.array([1] * 10 + [0] * 90)
    s = train_test_split(np.zeros((100, 1)), y, 0.8, seed=3)
    assert y[s.train].sum() == 8 and y[s.test].sum() == 2
    assert np.intersect1d(s.train, s.test).size == 0
    assert len(s.train) + len(s.test) == 100
    again = train_test_split(np.zeros((100, 1)), y, 0.8, seed=3)
    assert np.array_equal(s.train, again.train)


def test_unstratified_split_sizes_and_errors():
    s = train_test_split(np.zeros((4, 1)), np.array([0, 1, 0, 1]), 0.5, stratified=False)
    assert len(s.train) == 2 and len(s.test) == 2
    with pytest.raises(ValueError):
        train_test_split(np.zeros((4, 1)), np.zeros(4), 1.0)
    with pytest.raises(ValueError):
        train_test_split(np.zeros((4, 1)), np.zeros(4), 0.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 60), st.integers(2, 60), st.floats(0.1, 0.9))
def test_stratified_split_preserves_proportions(seed, n0, n1, ratio):
    y = np.array([0] * n0 + [1] * n1)
    s = train_test_split(None, y, ratio, seed=seed)
    for c, nc in ((0, n0), (1, n1)):
        assert abs((y[s.train] == c).sum() - ratio * nc) <= 1


# --- logistic regression ----------------------------------------------------------------------


def test_logistic_untrained_predicts_half():
    m = train_logreg(np.random.default_rng(0).normal(size=(5, 3)), np.array([0, 1, 0, 1, 1]), max_iter=0)
    np.testing.assert_allclose(m.predict_proba(np.ones((3, 3))), 0.5)
    assert np.all(m.weights == 0)


def test_logistic_separable_1d():
    m = train_logreg(np.array([[-1.0], [1.0]]), np.array([0, 1]), l2=1e-6)
    assert accuracy([0, 1], predict(m, np.array([[-1.0], [1.0]]))) == 1.0


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 6))
    y = rng.integers(0, 2, 40).astype(float)
    h = 1e-5
    for _ in range(20):
        w, b, l2 = rng.normal(size=6), float(rng.normal()), float(rng.uniform(0, 3))
        gw, gb = logistic_gradient(w, b, X, y, l2)
        num = np.empty(7)
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            num[j] = (logistic_loss(w + e, b, X, y, l2) - logistic_loss(w - e, b, X, y, l2)) / (2 * h)
        num[6] = (logistic_loss(w, b + h, X, y, l2) - logistic_loss(w, b - h, X, y, l2)) / (2 * h)
        ana = np.append(gw, gb)
        assert np.linalg.norm(ana - num) / np.linalg.norm(num) <= 1e-5


def test_logistic_loss_trace_non_increasing_and_converges():
    X, y = blobs(1)
    m = train_logreg(X, y, l2=1.0, max_iter=2000)
    assert np.all(np.diff(m.loss_trace) <= 0)
    gw, gb = logistic_gradient(m.weights, m.bias, X, y.astype(float), 1.0)
    assert max(np.abs(gw).max(), abs(gb)) <= 1e-6


def test_logistic_rejects_bad_input():
    with pytest.raises(ValueError):
        train_logreg(np.array([[np.nan]]), np.array([1]))
    with pytest.raises(ValueError):
        train_logreg(np.zeros((2, 1)), np.array([0, 2]))


def test_logistic_argmax_invariant_to_shifting_both_scores():
    m = LogisticModel(np.array([1.0, -2.0]), 0.3)
    X = np.random.default_rng(2).normal(size=(30, 2))
    p = m.predict_proba(X)
    assert np.array_equal(np.argmax(p + 5.0, axis=1), np.argmax(p, axis=1))
    assert np.array_equal(np.argmax(np.log(p) - 2.0, axis=1), predict(m, X))


# --- forest ------------------------------------------------------------------------------------


def test_single_unbootstrapped_tree_equals_decision_tree():
    X, y = blobs(2, n=80)
    f = train_forest(X, y, n_trees=1, max_depth=None, features_per_split=X.shape[1], bootstrap=False)
    t = train_tree(X, y)
    np.testing.assert_array_equal(f.predict_proba(X), t.predict_proba(X))


def test_pure_labels():
    X = np.random.default_rng(0).normal(size=(10, 2))
    f = train_forest(X, np.ones(10, int), n_trees=5, n_classes=2)
    np.testing.assert_array_equal(f.predict_proba(X), np.tile([0.0, 1.0], (10, 1)))


def test_forest_fits_xor():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    # no single split reduces Gini on the full XOR table; bootstrap resamples break the symmetry
    f = train_forest(X, y, n_trees=50, max_depth=2, features_per_split=2, seed=0)
    assert accuracy(y, predict(f, X)) == 1.0


def test_forest_order_invariant_and_deterministic():
    X, y = blobs(3, n=100)
    f = train_forest(X, y, n_trees=12, seed=5)
    g = train_forest(X, y, n_trees=12, seed=5)
    np.testing.assert_array_equal(f.predict_proba(X), g.predict_proba(X))
    rev = ForestModel(f.trees[::-1], f.n_features, f.n_classes, f.max_depth, f.features_per_split, f.seed)
    np.testing.assert_allclose(rev.predict_proba(X), f.predict_proba(X), atol=1e-15)


def test_single_split_tree_importance_on_one_feature():
    X = np.column_stack([np.zeros(6), [0, 1, 2, 3, 4, 5.0]])
    t = train_tree(X, np.array([0, 0, 0, 1, 1, 1]), max_depth=1)
    imp = t.feature_importance()
    assert imp[0] == 0 and imp[1] > 0


# --- gradient boosting ----------------------------------------------------------------------------


def test_gbdt_zero_rounds_gives_priors():
    y = np.array([0, 0, 0, 1])
    m = train_gbdt(np.arange(4.0)[:, None], y, n_rounds=0)
    np.testing.assert_allclose(m.predict_proba(np.zeros((2, 1))), [[0.75, 0.25]] * 2, atol=1e-12)
    assert np.all(feature_importance(m) == 0)


def test_gbdt_single_class_grows_nothing():
    m = train_gbdt(np.arange(4.0)[:, None], np.zeros(4, int), n_rounds=5, n_classes=2)
    assert m.n_rounds == 0


def test_gbdt_separable_1d():
    X = np.linspace(-1, 1, 20)[:, None]
    y = (X[:, 0] > 0).astype(int)
    m = train_gbdt(X, y, n_rounds=10)
    assert accuracy(y, predict(m, X)) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_gbdt_depth1_split_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 5, size=(6, 3)).astype(float)
    y = rng.integers(0, 2, 6)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    m = train_gbdt(X, y, n_rounds=1, lr=1.0, max_depth=1, l2_leaf=1.0)
    p0 = y.mean()
    g = p0 - y
    h = np.full(6, p0 * (1 - p0))
    gain, j, t = brute_root_split(X, g, h, 1.0)
    tree = m.trees[0][0]
    if gain <= 0:
        assert tree.n_nodes == 1
        return
    assert tree.feature[0] == j
    assert tree.threshold[0] == t
    assert tree.gain[0] == pytest.approx(gain, abs=1e-12)
    # leaf weights -G / (H + lambda)
    left = X[:, j] <= t
    assert tree.value[tree.left[0], 0] == pytest.approx(-g[left].sum() / (h[left].sum() + 1.0), abs=1e-12)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_gbdt_loss_never_increases(k):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(150, 4))
        y = rng.integers(0, k, 150)
        X[:, 1] += y
        m = train_gbdt(X, y, n_rounds=40, max_depth=3, n_classes=k)
        assert np.all(np.diff(m.loss_trace) <= 1e-12)
        np.testing.assert_allclose(m.predict_proba(X).sum(axis=1), 1.0, atol=1e-9)


def test_gbdt_multiclass_learns_clusters():
    rng = np.random.default_rng(0)
    y = np.repeat(np.arange(4), 50)
    X = rng.normal(size=(200, 3)) + 4.0 * np.eye(4, 3)[y]
    m = train_gbdt(X, y, n_rounds=30, n_classes=4)
    assert len(m.trees[0]) == 4
    assert accuracy(y, predict(m, X)) >= 0.95


# --- predictions and metrics -------------------------------------------------------------------------


@pytest.mark.parametrize("trainer", ["logistic", "forest", "gbdt"])
def test_probabilities_normalized_and_dimension_checked(trainer):
    X, y = blobs(4, n=60)
    m = {"logistic": lambda: train_logreg(X, y),
         "forest": lambda: train_forest(X, y, n_trees=5),
         "gbdt": lambda: train_gbdt(X, y, n_rounds=5)}[trainer]()
    P = m.predict_proba(np.random.default_rng(0).normal(size=(25, 5)) * 10)
    assert np.all((P >= 0) & (P <= 1))
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        m.predict_proba(np.zeros((2, 4)))


def test_f_score_examples():
    y_true = [1, 1, 1, 0, 0]
    y_pred = [1, 1, 0, 1, 0]  # TP=2, FP=1, FN=1
    assert f_score(y_true, y_pred) == pytest.approx(2 / 3)
    assert f_score(y_true, y_true) == 1.0
    assert f_score([1, 0], [0, 0]) == 0.0
    assert macro_f_score([0, 1], [0, 1]) == 1.0


def test_auroc_examples():
    assert auroc([0, 1], [0.1, 0.9]) == 1.0
    assert auroc([0, 1, 0, 1], [0.3] * 4) == 0.5
    with pytest.raises(ValueError):
        auroc([1, 1], [0.2, 0.3])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 500))
def test_auroc_matches_pair_counting(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    y[0], y[-1] = 0, 1
    s = rng.integers(0, 20, n) / 7.0
    assert auroc(y, s) == pytest.approx(brute_auroc(y, s), abs=1e-12)


# --- importance ------------------------------------------------------------------------------------------


def test_logistic_importance_is_abs_weight():
    assert feature_importance(LogisticModel(np.array([2.0, -3.0, 0.0]))).tolist() == [2.0, 3.0, 0.0]


def test_ensemble_rank_examples():
    r = ensemble_rank([[1, 2, 3], [3, 2, 1], [2, 2, 2]])
    assert r.mean_rank.tolist() == [2.0, 2.0, 2.0]
    same = ensemble_rank([[5, 1, 3]] * 3)
    assert same.mean_rank.tolist() == [3.0, 1.0, 2.0]
    assert same.top(1) == ["0"]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_ensemble_rank_is_permutation_equivariant(seed, d):
    rng = np.random.default_rng(seed)
    S = rng.integers(0, 4, size=(3, d)).astype(float)
    perm = rng.permutation(d)
    a = ensemble_rank(S)
    b = ensemble_rank(S[:, perm])
    np.testing.assert_allclose(b.mean_rank, a.mean_rank[perm])
    np.testing.assert_allclose(a.ranks.sum(axis=1), d * (d + 1) / 2)


# --- serialization -----------------------------------------------------------------------------------------


def test_models_round_trip_through_json(tmp_path):
    X, y = blobs(5, n=80)
    for m in (train_logreg(X, y), train_forest(X, y, n_trees=4), train_gbdt(X, y, n_rounds=4)):
        text = model_to_json(m)
        json.loads(text)
        back = model_from_json(text)
        np.testing.assert_array_equal(back.predict_proba(X), m.predict_proba(X))
        save_model(m, tmp_path / "m.json")
        assert isinstance(load_model(tmp_path / "m.json"), type(m))
    assert isinstance(back, GbdtModel)
