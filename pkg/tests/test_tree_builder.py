"""Tests for regression-tree growth and split search"""

import numpy as np
import pytest

from errors import DataValidationError
from tree_builder import (
    MAX_CATEGORICAL_LEVELS,
    TreeNode,
    TreeParams,
    build_tree,
    find_best_split,
    histogram_edges,
    leaf_value,
    split_gain,
)


def logistic_stats(y, p=0.5):
    y = np.asarray(y, dtype=float)
    g = y - p
    h = np.full(y.size, p * (1 - p))
    return g, h


def surrogate_loss(g, h, rows):
    """Per-row second-order deviance change at the Newton step of the rows"""
    v = g[rows].sum() / h[rows].sum()
    return float(np.sum(-g[rows] * v + 0.5 * h[rows] * v * v))


def brute_force_split(X, g, h, min_leaf):
    """Exhaustive search over every feature and midpoint, scoring each split by summed surrogate loss"""
    best = (-np.inf, None, None)
    everything = np.ones(X.shape[0], dtype=bool)
    parent = surrogate_loss(g, h, everything)
    for j in range(X.shape[1]):
        values = np.unique(X[:, j])
        for lo, hi in zip(values[:-1], values[1:]):
            threshold = 0.5 * (lo + hi)
            left = X[:, j] < threshold
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            reduction = parent - surrogate_loss(g, h, left) - surrogate_loss(g, h, ~left)
            if reduction > best[0]:
                best = (reduction, j, threshold)
    return best


def exact_deviance_after_split(X, y, raw, j, threshold):
    """Binomial deviance once each side takes its Newton leaf value"""
    p = 1.0 / (1.0 + np.exp(-raw))
    g, h = y - p, p * (1 - p)
    left = X[:, j] < threshold
    updated = raw.copy()
    for side in (left, ~left):
        updated[side] += g[side].sum() / h[side].sum()
    return float(np.sum(np.logaddexp(0.0, updated) - y * updated))


def test_leaf_value_is_newton_step():
    g = np.array([0.5, 0.5, -0.5])
    h = np.array([0.25, 0.25, 0.25])
    assert leaf_value(g, h) == pytest.approx(0.5 / 0.75)


def test_perfect_split_found():
    X = np.array([[0.0, 5.0], [1.0, 3.0], [2.0, 5.0], [3.0, 3.0]])
    g, h = logistic_stats([0, 0, 1, 1])
    split = find_best_split(X, g, h, TreeParams(max_depth=1, min_leaf=1, categorical_mask=[False, False]))

    assert split.feature_index == 0
    assert split.threshold == 1.5


@pytest.mark.parametrize("seed", range(50))
def test_root_split_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 201))
    X = np.round(rng.normal(size=(n, 5)), 2)
    y = rng.random(n) < 1.0 / (1.0 + np.exp(-2.0 * X[:, seed % 5]))
    if y.all() or not y.any():
        y[0] = not y[0]
    p = rng.uniform(0.2, 0.8, size=n)
    g = y.astype(float) - p
    h = p * (1 - p)

    tree = build_tree(X, g, h, TreeParams(max_depth=1, min_leaf=5, categorical_mask=[False] * 5))
    oracle_gain, oracle_feature, oracle_threshold = brute_force_split(X, g, h, 5)

    assert tree.feature_index == oracle_feature
    assert tree.threshold == oracle_threshold
    assert tree.gain == pytest.approx(oracle_gain, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_separating_feature_agrees_with_exact_deviance(seed):
    rng = np.random.default_rng(100 + seed)
    n = 60
    y = np.zeros(n)
    y[rng.permutation(n)[:25]] = 1.0
    X = np.round(rng.normal(size=(n, 4)), 2)
    X[:, 2] = np.where(y == 1, rng.uniform(1.0, 2.0, n), rng.uniform(-2.0, -1.0, n))
    raw = np.zeros(n)
    g, h = y - 0.5, np.full(n, 0.25)

    tree = build_tree(X, g, h, TreeParams(max_depth=1, min_leaf=1, categorical_mask=[False] * 4))
    assert tree.feature_index == 2
    assert -1.0 < tree.threshold < 1.0

    exact = min(
        (exact_deviance_after_split(X, y, raw, j, 0.5 * (lo + hi)), j)
        for j in range(4)
        for lo, hi in zip(np.unique(X[:, j])[:-1], np.unique(X[:, j])[1:])
    )
    assert exact[1] == 2


def test_min_leaf_respected():
    X = np.arange(10, dtype=float).reshape(-1, 1)
    g, h = logistic_stats([1] + [0] * 9)
    tree = build_tree(X, g, h, TreeParams(max_depth=3, min_leaf=3, categorical_mask=[False]))
    for node in tree.iter_nodes():
        if node.is_leaf:
            assert node.n_samples >= 3


def test_missing_values_learn_direction():
    X = np.array([[0.0], [1.0], [np.nan], [np.nan], [10.0], [11.0]])
    g, h = logistic_stats([0, 0, 1, 1, 1, 1])
    tree = build_tree(X, g, h, TreeParams(max_depth=1, min_leaf=1, categorical_mask=[False]))

    assert tree.threshold == 5.5
    assert tree.missing_left is False
    preds = tree.predict(np.array([[np.nan], [0.5]]))
    assert preds[0] == tree.right.value
    assert preds[1] == tree.left.value


def test_categorical_subset_split():
    # levels 0 and 2 are positive, 1 and 3 negative; no single threshold separates them
    codes = np.array([0, 1, 2, 3] * 5, dtype=float).reshape(-1, 1)
    y = np.isin(codes[:, 0], [0, 2])
    g, h = logistic_stats(y)
    tree = build_tree(codes, g, h, TreeParams(max_depth=1, min_leaf=1, categorical_mask=[True]))

    assert tree.is_categorical
    assert set(tree.left_levels) in ({0, 2}, {1, 3})
    preds = tree.predict(codes)
    assert len(set(preds[y])) == 1 and len(set(preds[~y])) == 1
    assert preds[y][0] > 0 > preds[~y][0]


def test_too_many_categorical_levels_is_a_data_error():
    codes = np.arange(MAX_CATEGORICAL_LEVELS + 1, dtype=float).repeat(3).reshape(-1, 1)
    g, h = logistic_stats(codes[:, 0] % 2 == 0)
    with pytest.raises(DataValidationError) as excinfo:
        build_tree(codes, g, h, TreeParams(max_depth=1, min_leaf=1, categorical_mask=[True]))
    assert excinfo.value.code == "too_many_levels"
    assert excinfo.value.exit_code == 2


def test_unseen_level_goes_right_and_missing_follows_direction():
    node = TreeNode(feature_index=0, left_levels=[1], missing_left=True,
                    left=TreeNode(value=1.0), right=TreeNode(value=-1.0))
    preds = node.predict(np.array([[1.0], [7.0], [np.nan]]))
    assert preds.tolist() == [1.0, -1.0, 1.0]


def test_parallel_search_is_identical():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 6))
    X[:, 5] = rng.integers(0, 4, size=300)
    g, h = logistic_stats(rng.random(300) < 0.3)
    mask = [False] * 5 + [True]
    sequential = build_tree(X, g, h, TreeParams(max_depth=3, min_leaf=10, categorical_mask=mask, n_jobs=1))
    parallel = build_tree(X, g, h, TreeParams(max_depth=3, min_leaf=10, categorical_mask=mask, n_jobs=4))
    assert sequential.to_dict() == parallel.to_dict()


def test_histogram_mode_uses_bin_edges():
    X = np.arange(1000, dtype=float).reshape(-1, 1)
    g, h = logistic_stats((X[:, 0] > 600).astype(int))
    edges = histogram_edges(X, [False], n_bins=4)
    tree = build_tree(X, g, h, TreeParams(max_depth=1, min_leaf=1, categorical_mask=[False], bin_edges=edges))
    assert tree.threshold in edges[0].tolist()


def test_serialization_round_trip():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 3))
    X[rng.random(200) < 0.1, 1] = np.nan
    g, h = logistic_stats(X[:, 0] + rng.normal(size=200) > 0)
    tree = build_tree(X, g, h, TreeParams(max_depth=3, min_leaf=5, categorical_mask=[False] * 3))
    restored = TreeNode.from_dict(tree.to_dict())
    np.testing.assert_array_equal(restored.predict(X), tree.predict(X))
    assert restored.depth == tree.depth <= 3


def test_split_gain_zero_for_uninformative_split():
    assert split_gain(1.0, 1.0, 1.0, 1.0, 2.0, 2.0) == pytest.approx(0.0)
