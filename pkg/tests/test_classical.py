import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualtab.classical import (
    cart_fit,
    cart_predict,
    cart_route,
    kmeans,
    knn_predict,
    linear_fit,
    logistic_fit,
    pca_fit,
    pca_transform,
    sse,
)
from dualtab.errors import ContractError, NumericError


def jacobi_eigh(A, sweeps=100):
    """Cyclic Jacobi rotations on a symmetric matrix; eigenpairs sorted descending."""
    A = np.array(A, dtype=np.float64)
    n = len(A)
    V = np.eye(n)
    for _ in range(sweeps):
        off = np.sqrt((A**2).sum() - (np.diag(A) ** 2).sum())
        if off < 1e-14:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1)) if theta != 0 else 1.0
                c = 1 / np.sqrt(t**2 + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    vals = np.diag(A)
    order = np.argsort(-vals)
    return vals[order], V[:, order]


def best_split_oracle(X, y, C):
    """Exhaustive search over every feature and midpoint; returns (score, feature, threshold)."""
    best = (np.inf, -1, 0.0)
    n = len(y)
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2
            left, right = y[X[:, j] <= thr], y[X[:, j] > thr]
            g = lambda part: 1 - sum((np.sum(part == c) / len(part)) ** 2 for c in range(C))
            score = (len(left) * g(left) + len(right) * g(right)) / n
            if score < best[0] - 1e-12:
                best = (score, j, thr)
    return best


# -- PCA --------------------------------------------------------------------------------


def test_pca_line():
    t = np.linspace(-2, 2, 9)
    model = pca_fit(np.stack([t, t], 1), 2)
    np.testing.assert_allclose(np.abs(model.components[0]), [1 / np.sqrt(2)] * 2, atol=1e-8)
    assert model.variances[1] == pytest.approx(0.0, abs=1e-10)


def test_pca_mean_maps_to_zero(rng):
    X = rng.normal(size=(10, 4))
    model = pca_fit(X, 3)
    np.testing.assert_allclose(pca_transform(model, X.mean(0, keepdims=True)), 0.0, atol=1e-12)


def test_pca_matches_jacobi_oracle(rng):
    X = rng.normal(size=(6, 4))
    model = pca_fit(X, 4, iterations=500)
    Xc = X - X.mean(0)
    vals, vecs = jacobi_eigh(Xc.T @ Xc / 5)
    np.testing.assert_allclose(model.variances, vals, atol=1e-8)
    proj = pca_transform(model, X)
    want = Xc @ vecs
    signs = np.sign((proj * want).sum(0))
    np.testing.assert_allclose(proj, want * signs, atol=1e-4)


def test_jacobi_oracle_agrees_with_definition(rng):
    A = rng.normal(size=(5, 5))
    A = A + A.T
    vals, vecs = jacobi_eigh(A)
    np.testing.assert_allclose(A @ vecs, vecs * vals, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(3, 20), st.integers(0, 10**6))
def test_pca_orthonormal_and_reconstruction_monotone(d, n, seed):
    X = np.random.default_rng(seed).normal(size=(n, d))
    errs = []
    for q in range(1, d + 1):
        model = pca_fit(X, q)
        V = model.components
        assert np.abs(V @ V.T - np.eye(q)).max() <= 1e-5
        assert np.all(np.diff(model.variances) <= 1e-9)
        Z = pca_transform(model, X)
        errs.append(float(((X - model.mean - Z @ V) ** 2).sum()))
    assert all(a >= b - 1e-8 for a, b in zip(errs, errs[1:]))


def test_pca_rank_deficient_completion():
    X = np.zeros((5, 3))
    X[:, 0] = np.arange(5)
    model = pca_fit(X, 3)
    assert np.abs(model.components @ model.components.T - np.eye(3)).max() <= 1e-8
    np.testing.assert_allclose(model.variances[1:], 0.0, atol=1e-12)


def test_pca_too_many_components():
    with pytest.raises(ContractError):
        pca_fit(np.zeros((5, 2)), 3)


# -- KMeans -----------------------------------------------------------------------------


def test_kmeans_k_equals_n(rng):
    X = rng.normal(size=(6, 2))
    centers, assign = kmeans(X, 6, seed=0)
    assert sse(X, centers, assign) == 0.0
    assert sorted(assign.tolist()) == list(range(6))


def test_kmeans_separated_blobs(rng):
    X = np.vstack([rng.normal(size=(20, 2)), rng.normal(size=(20, 2)) + 10 * 2])
    truth = np.repeat([0, 1], 20)
    _, assign = kmeans(X, 2, seed=3)
    assert np.array_equal(assign, truth) or np.array_equal(assign, 1 - truth)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10**6))
def test_kmeans_sse_monotone(k, seed):
    X = np.random.default_rng(seed).normal(size=(40, 3))
    history = []
    centers, assign = kmeans(X, k, seed=seed, history=history)
    assert all(a >= b - 1e-9 for a, b in zip(history, history[1:]))
    # fixpoint: one more assignment step changes nothing
    d = ((X[:, None] - centers[None]) ** 2).sum(-1)
    assert np.array_equal(np.argmin(d, 1), assign)


def test_kmeans_duplicates_reseed():
    X = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]])
    centers, assign = kmeans(X, 3, seed=0)
    assert centers.shape == (3, 2)
    assert np.isfinite(centers).all()


def test_kmeans_bad_k():
    with pytest.raises(ContractError):
        kmeans(np.zeros((3, 2)), 4)


# -- CART -------------------------------------------------------------------------------


def test_cart_pure_input_single_leaf():
    tree = cart_fit(np.arange(6.0)[:, None], np.zeros(6, dtype=int))
    assert tree.n_nodes == 1


def test_cart_root_threshold():
    tree = cart_fit(np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([0, 0, 1, 1]), min_samples_split=2)
    assert tree.feature[0] == 0 and tree.threshold[0] == 1.5


def test_cart_min_split_above_n():
    tree = cart_fit(np.arange(5.0)[:, None], np.array([0, 1, 0, 1, 0]), min_samples_split=6)
    assert tree.n_nodes == 1


def test_cart_root_matches_exhaustive_oracle(rng):
    for trial in range(15):
        X = np.round(rng.normal(size=(25, 3)), 1)
        y = rng.integers(0, 3, size=25)
        tree = cart_fit(X, y, min_samples_split=2, n_classes=3)
        score, j, thr = best_split_oracle(X, y, 3)
        if j < 0:
            assert tree.n_nodes == 1
            continue
        assert (tree.feature[0], tree.threshold[0]) == (j, pytest.approx(thr))


def test_cart_tie_break_lowest_feature():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    tree = cart_fit(X, np.array([0, 0, 1, 1]))
    assert tree.feature[0] == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 15), st.integers(0, 10**6), st.sampled_from(["classification", "regression"]))
def test_cart_never_splits_small_nodes(min_split, seed, task):
    g = np.random.default_rng(seed)
    X = g.normal(size=(60, 3))
    y = g.integers(0, 3, 60) if task == "classification" else g.normal(size=60)
    tree = cart_fit(X, y, min_split, task)
    for i in range(tree.n_nodes):
        if tree.feature[i] >= 0:
            assert tree.n_samples[i] >= min_split
            assert tree.n_samples[tree.left[i]] + tree.n_samples[tree.right[i]] == tree.n_samples[i]
    leaves = [cart_route(tree, x) for x in X]
    assert leaves == [cart_route(tree, x) for x in X]
    assert all(tree.feature[l] < 0 for l in leaves)


def test_cart_regression_fits_step():
    X = np.arange(10.0)[:, None]
    y = np.where(X[:, 0] < 5, 1.0, 3.0)
    tree = cart_fit(X, y, task="regression")
    assert tree.threshold[0] == 4.5
    np.testing.assert_allclose(cart_predict(tree, X), y)


def test_cart_left_branch_is_le():
    tree = cart_fit(np.array([[0.0], [1.0]]), np.array([0, 1]))
    assert cart_route(tree, [0.5]) == tree.left[0]
    assert cart_route(tree, [0.5000001]) == tree.right[0]


# -- linear / knn ---------------------------------------------------------------------


def test_logistic_two_points():
    m = logistic_fit(np.array([[-1.0], [1.0]]), np.array([0, 1]))
    assert m.predict(np.array([[-1.0], [1.0]])).tolist() == [0, 1]
    np.testing.assert_allclose(m.predict_proba(np.zeros((3, 1))).sum(1), 1.0, atol=1e-12)


def test_logistic_loss_monotone(rng):
    X = rng.normal(size=(50, 4))
    y = rng.integers(0, 3, 50)
    m = logistic_fit(X, y, 3, lr=5.0, epochs=100)
    assert all(a >= b for a, b in zip(m.losses, m.losses[1:]))


def test_ridge_large_lambda_limit(rng):
    X = rng.normal(size=(30, 3))
    y = X @ np.array([1.0, 2.0, -1.0]) + 4.0
    m = linear_fit(X, y, ridge=1e12)
    np.testing.assert_allclose(m.weights, 0.0, atol=1e-8)
    assert m.bias == pytest.approx(y.mean(), abs=1e-6)


def test_ridge_recovers_weights(rng):
    X = rng.normal(size=(40, 3))
    y = X @ np.array([1.0, 2.0, -1.0]) + 4.0
    m = linear_fit(X, y, ridge=0.0)
    np.testing.assert_allclose(m.weights, [1.0, 2.0, -1.0], atol=1e-10)


def test_ridge_singular():
    with pytest.raises(NumericError, match="ridge"):
        linear_fit(np.ones((5, 2)), np.arange(5.0), ridge=0.0)


def test_knn_self_label(rng):
    X = rng.normal(size=(10, 2))
    y = rng.integers(0, 3, 10)
    assert knn_predict(X, y, X, K=1).tolist() == y.tolist()


def test_knn_vote_tie_goes_to_lowest_label():
    X = np.array([[0.0], [1.0]])
    assert knn_predict(X, np.array([1, 0]), np.array([[0.5]]), K=2).tolist() == [0]


def test_knn_regression_mean():
    X = np.array([[0.0], [1.0], [10.0]])
    assert knn_predict(X, np.array([1.0, 3.0, 100.0]), np.array([[0.4]]), K=2, task="regression").tolist() == [2.0]


def test_knn_bad_k():
    with pytest.raises(ContractError):
        knn_predict(np.zeros((2, 1)), np.zeros(2), np.zeros((1, 1)), K=3)
