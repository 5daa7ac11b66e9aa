from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from antiphishstack.boost import (BoostedEnsemble, BoostParams, RegressionTree, assemble_meta_features,
                                  boost_fit, build_tree, ensemble_from_arrays, ensemble_to_arrays, final_predict,
                                  grad_hess, load_ensemble, logistic_loss, predict_proba, save_ensemble)
from antiphishstack.errors import ConfigError, LengthMismatch, SchemaMismatch, SingleClassError


def enumerate_tree(X, g, h, lam, gamma, min_h, max_depth, idx=None, depth=0):
    """Reference builder: scan every (column, midpoint) with boolean masks, keep the first maximum."""
    if idx is None:
        idx = np.arange(len(g))
    G, H = g[idx].sum(), h[idx].sum()
    leaf = ("leaf", -G / (H + lam))
    if depth >= max_depth or len(idx) < 2:
        return leaf
    best, best_gain = None, 0.0
    for col in range(X.shape[1]):
        values = np.unique(X[idx, col])
        for a, b in zip(values[:-1], values[1:]):
            thr = 0.5 * (a + b)
            mask = X[idx, col] <= thr
            GL, HL = g[idx[mask]].sum(), h[idx[mask]].sum()
            GR, HR = g[idx[~mask]].sum(), h[idx[~mask]].sum()
            if HL < min_h or HR < min_h:
                continue
            gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma
            if gain > best_gain:
                best, best_gain = (col, thr, mask), gain
    if best is None:
        return leaf
    col, thr, mask = best
    return ("split", col, thr, best_gain,
            enumerate_tree(X, g, h, lam, gamma, min_h, max_depth, idx[mask], depth + 1),
            enumerate_tree(X, g, h, lam, gamma, min_h, max_depth, idx[~mask], depth + 1))


def as_nested(tree: RegressionTree, node=0):
    if tree.feature[node] < 0:
        return ("leaf", tree.weight[node])
    return ("split", int(tree.feature[node]), tree.threshold[node], tree.gain[node],
            as_nested(tree, tree.left[node]), as_nested(tree, tree.right[node]))


def test_grad_hess_examples():
    g, h = grad_hess(np.array([1.0]), np.array([0.0]))
    assert (g[0], h[0]) == (-0.5, 0.25)
    g, h = grad_hess(np.array([0.0]), np.array([50.0]))
    assert g[0] == pytest.approx(1.0) and 0 < h[0] < 1e-20 + 1e-16 * 2
    g, _ = grad_hess(np.array([0.0]), np.array([-800.0]))
    assert g[0] == 0.0


def test_forced_leaf_weight():
    tree = build_tree(np.array([[0.0], [1.0]]), [1.0, -2.0], [1.0, 1.0], BoostParams(max_depth=0, lam=1.0))
    assert tree.n_leaves == 1
    assert tree.weight[0] == pytest.approx(1 / 3, abs=1e-15)


def test_hand_split_gain():
    tree = build_tree(np.array([[0.0], [1.0]]), [1.0, -2.0], [1.0, 1.0], BoostParams(max_depth=1, lam=1.0))
    assert tree.feature[0] == 0 and tree.threshold[0] == 0.5
    assert tree.gain[0] == pytest.approx(0.5 * (1 / 2 + 4 / 2 - 1 / 3), abs=1e-15)
    assert tree.gain[0] == pytest.approx(1.0833333333333333)


def test_large_gamma_single_leaf():
    tree = build_tree(np.array([[0.0], [1.0]]), [1.0, -2.0], [1.0, 1.0], BoostParams(max_depth=3, gamma=10.0))
    assert tree.n_leaves == 1


def test_min_child_hessian_blocks_split():
    params = BoostParams(max_depth=1, min_child_hessian=1.5)
    tree = build_tree(np.array([[0.0], [1.0]]), [1.0, -2.0], [1.0, 1.0], params)
    assert tree.n_leaves == 1


def test_gain_ties_prefer_lowest_column_then_threshold():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    g = np.array([1.0, 1.0, -1.0, -1.0])
    tree = build_tree(X, g, np.ones(4), BoostParams(max_depth=1, min_child_hessian=0.0))
    assert (tree.feature[0], tree.threshold[0]) == (0, 1.5)
    g2 = np.array([1.0, -1.0, 1.0, -1.0])
    t2 = build_tree(X[:, :1], g2, np.ones(4), BoostParams(max_depth=1, min_child_hessian=0.0, lam=0.0))
    # thresholds 0.5 and 2.5 give equal gain; the lower one wins
    assert t2.threshold[0] == 0.5


dyadic = st.integers(-16, 16).map(lambda v: v / 8)
hess = st.integers(1, 16).map(lambda v: v / 8)


@st.composite
def small_problem(draw, exact=True):
    n = draw(st.integers(2, 20))
    d = draw(st.integers(1, 3))
    X = np.array(draw(st.lists(st.lists(st.integers(0, 4).map(float), min_size=d, max_size=d),
                               min_size=n, max_size=n)))
    if exact:
        g = np.array(draw(st.lists(dyadic, min_size=n, max_size=n)))
        h = np.array(draw(st.lists(hess, min_size=n, max_size=n)))
    else:
        g = np.array(draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n)))
        h = np.array(draw(st.lists(st.floats(1e-3, 0.25), min_size=n, max_size=n)))
    lam = draw(st.sampled_from([0.0, 0.5, 1.0, 2.0]))
    min_h = draw(st.sampled_from([0.0, 0.25, 1.0]))
    return X, g, h, lam, min_h, draw(st.integers(0, 2))


@given(small_problem(exact=True))
def test_tree_equals_exhaustive_enumeration_exactly(problem):
    X, g, h, lam, min_h, depth = problem
    params = BoostParams(lam=lam, gamma=0.0, max_depth=depth, min_child_hessian=min_h)
    assert as_nested(build_tree(X, g, h, params)) == enumerate_tree(X, g, h, lam, 0.0, min_h, depth)


def _close(a, b, tol=1e-12):
    if a[0] != b[0]:
        return False
    if a[0] == "leaf":
        return abs(a[1] - b[1]) <= tol
    return a[1:3] == b[1:3] and abs(a[3] - b[3]) <= tol and _close(a[4], b[4], tol) and _close(a[5], b[5], tol)


@given(small_problem(exact=False))
def test_tree_matches_enumeration_on_real_valued_derivatives(problem):
    X, g, h, lam, min_h, depth = problem
    params = BoostParams(lam=lam + 0.1, max_depth=depth, min_child_hessian=min_h * 0.1)
    got = as_nested(build_tree(X, g, h, params))
    want = enumerate_tree(X, g, h, lam + 0.1, 0.0, min_h * 0.1, depth)
    assert _close(got, want)


def _leaf_sums(tree, X, g, h):
    leaves = tree.apply(X)
    return {int(n): (g[leaves == n].sum(), h[leaves == n].sum()) for n in np.unique(leaves)}


def test_fitted_leaf_weights_closed_form_and_optimal():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 3))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(float)
    params = BoostParams(rounds=20, learning_rate=0.3, lam=1.0, max_depth=3)
    ens = boost_fit(X, y, params)
    raw = np.full(len(y), ens.base_score)
    for tree in ens.trees:
        g, h = grad_hess(y, raw)
        for node, (G, H) in _leaf_sums(tree, X, g, h).items():
            w = tree.weight[node]
            assert abs(w - (-G / (H + params.lam))) <= 1e-12
            objective = lambda v: G * v + 0.5 * (H + params.lam) * v * v
            assert objective(w) < objective(w + 1e-3) and objective(w) < objective(w - 1e-3)
        raw = raw + params.learning_rate * tree.predict(X)


def test_balanced_prior_stays_half():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 1, 0, 1])
    ens = boost_fit(X, y, BoostParams(rounds=1, max_depth=0, lam=0.0, learning_rate=1.0))
    assert ens.base_score == 0.0
    assert ens.trees[0].weight[0] == 0.0
    assert np.all(predict_proba(ens, X) == 0.5)


def test_separable_one_dimensional():
    X = np.linspace(0, 1, 40)[:, None]
    y = (X[:, 0] > 0.37).astype(int)
    ens = boost_fit(X, y, BoostParams(rounds=10, max_depth=1, learning_rate=0.3))
    _, label = final_predict(ens, X)
    assert np.array_equal(label, y)


def test_zero_learning_rate_keeps_prior():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 2))
    y = (rng.random(50) < 0.3).astype(int)
    ens = boost_fit(X, y, BoostParams(rounds=7, learning_rate=0.0))
    prior = y.mean()
    assert np.allclose(predict_proba(ens, X), prior, atol=1e-15)


def test_single_class_rejected():
    with pytest.raises(SingleClassError):
        boost_fit(np.zeros((3, 1)), [1, 1, 1])
    with pytest.raises(LengthMismatch):
        boost_fit(np.zeros((3, 1)), [0, 1])


def test_params_validation():
    with pytest.raises(ConfigError):
        BoostParams(learning_rate=1.5)
    with pytest.raises(ConfigError):
        BoostParams(lam=-1)


@given(st.integers(0, 10 ** 6))
def test_training_loss_non_increasing(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 120))
    X = rng.normal(size=(n, 2))
    y = (X[:, 0] + rng.normal(scale=0.7, size=n) > 0).astype(int)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    ens = boost_fit(X, y, BoostParams(rounds=30, learning_rate=0.3, gamma=0.0))
    hist = np.array(ens.loss_history)
    assert np.all(np.diff(hist) <= 1e-9 * hist[:-1])


def test_final_predict_examples():
    empty = BoostedEnsemble(0.4, [], BoostParams(), ["mean", "premier"])
    p, _ = final_predict(empty, np.zeros((2, 2)))
    assert np.allclose(p, 1 / (1 + math.exp(-0.4)))
    leaf = RegressionTree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.array([math.log(3)]),
                          np.ones(1, bool), np.zeros(1))
    ens = BoostedEnsemble(0.0, [leaf], BoostParams(learning_rate=1.0), ["a"])
    p, label = final_predict(ens, np.zeros((1, 1)))
    assert p[0] == pytest.approx(0.75, abs=1e-15) and label[0] == 1
    with pytest.raises(SchemaMismatch):
        final_predict(ens, np.zeros((1, 2)))


def test_positive_tree_never_decreases_probability():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 2))
    y = (X[:, 0] > 0).astype(int)
    ens = boost_fit(X, y, BoostParams(rounds=5))
    before = predict_proba(ens, X)
    tree = build_tree(X, -np.abs(rng.normal(size=100)) - 0.1, np.ones(100), BoostParams(max_depth=2))
    assert np.all(tree.weight > 0)
    ens.trees.append(tree)
    assert np.all(predict_proba(ens, X) >= before)


def test_missing_values_follow_heavier_child():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [np.nan]])
    g = np.array([1.0, 1.0, 1.0, -1.0, -1.0, 0.0])
    h = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
    tree = build_tree(X, g, h, BoostParams(max_depth=1, min_child_hessian=0.0))
    assert tree.threshold[0] == 2.5 and bool(tree.missing_left[0])
    assert tree.apply(np.array([[np.nan]]))[0] == tree.left[0]


def test_assemble_meta_features():
    m = assemble_meta_features(np.array([0.8]), np.array([0.9]))
    assert m.columns == ["mean", "premier"] and m.values.tolist() == [[0.8, 0.9]]
    per = {f"l{i}": np.array([0.1 * i]) for i in range(6)}
    m8 = assemble_meta_features(np.array([0.8]), np.array([0.9]), per)
    assert m8.values.shape == (1, 8)
    m2 = assemble_meta_features(np.array([0.5, 0.6]), {"clf": np.array([0.1, 0.2]), "urlf": np.array([0.3, 0.4])},
                                provenance=np.array([0, 1]))
    assert m2.columns == ["mean", "premier_clf", "premier_urlf"]
    assert m2.provenance.tolist() == [0, 1]
    with pytest.raises(LengthMismatch):
        assemble_meta_features(np.array([0.5, 0.6]), np.array([0.1]))


def test_ensemble_text_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    X = rng.normal(size=(80, 2))
    X[::7, 1] = np.nan
    y = (X[:, 0] > 0).astype(int)
    ens = boost_fit(X, y, BoostParams(rounds=8), ["mean", "premier"])
    save_ensemble(ens, tmp_path / "e.txt", "h:1")
    text = (tmp_path / "e.txt").read_text().splitlines()
    assert "tree_id,node_id,kind,column|weight,threshold,children" in text
    back, stamp = load_ensemble(tmp_path / "e.txt")
    assert stamp == "h:1" and back.schema == ["mean", "premier"]
    assert predict_proba(back, X).tobytes() == predict_proba(ens, X).tobytes()
    arrays = ensemble_from_arrays(ensemble_to_arrays(ens))
    assert predict_proba(arrays, X).tobytes() == predict_proba(ens, X).tobytes()
    (tmp_path / "bad.txt").write_text("# other\n")
    with pytest.raises(SchemaMismatch):
        load_ensemble(tmp_path / "bad.txt")


def test_logistic_loss_stable():
    assert logistic_loss(np.array([1.0]), np.array([1000.0])) == 0.0
    assert logistic_loss(np.array([0.0]), np.array([0.0])) == pytest.approx(math.log(2))
