"""
Tree Builder - Second-order regression trees for gradient boosting

Grows depth-limited binary trees on gradient/hessian statistics with exact
split search over all midpoints between distinct values (or an optional
equal-frequency histogram of candidate thresholds), categorical level-subset
splits ordered by gradient ratio, and a learned direction for missing values.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence

import numpy as np

from errors import DataValidationError

logger = logging.getLogger(__name__)

HESSIAN_FLOOR = 1e-12
MAX_CATEGORICAL_LEVELS = 16


@dataclass
class TreeNode:
    """
    Leaf (value set) or internal node (feature_index set)

    Numeric splits route x < threshold left; categorical splits route codes in
    left_levels left; missing values go left when missing_left.
    """
    value: Optional[float] = None
    feature_index: Optional[int] = None
    threshold: Optional[float] = None
    left_levels: Optional[List[int]] = None
    missing_left: bool = True
    gain: float = 0.0
    n_samples: int = 0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature_index is None

    @property
    def is_categorical(self) -> bool:
        return self.left_levels is not None

    def goes_left(self, column: np.ndarray) -> np.ndarray:
        missing = np.isnan(column)
        if self.is_categorical:
            left = np.isin(column, np.asarray(self.left_levels, dtype=float))
        else:
            with np.errstate(invalid="ignore"):
                left = column < self.threshold
        return np.where(missing, self.missing_left, left)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0], dtype=float)
        self._fill(X, np.arange(X.shape[0]), out)
        return out

    def _fill(self, X: np.ndarray, rows: np.ndarray, out: np.ndarray):
        if self.is_leaf:
            out[rows] = self.value
            return
        mask = self.goes_left(X[rows, self.feature_index])
        self.left._fill(X, rows[mask], out)
        self.right._fill(X, rows[~mask], out)

    def iter_nodes(self) -> Iterator["TreeNode"]:
        yield self
        if not self.is_leaf:
            yield from self.left.iter_nodes()
            yield from self.right.iter_nodes()

    def scale_leaves(self, factor: float):
        for node in self.iter_nodes():
            if node.is_leaf:
                node.value = node.value * factor

    @property
    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth, self.right.depth)

    def to_dict(self) -> Dict[str, Any]:
        if self.is_leaf:
            return {"leaf": self.value, "n": self.n_samples}
        data: Dict[str, Any] = {
            "feature": self.feature_index,
            "missing": "left" if self.missing_left else "right",
            "gain": self.gain,
            "n": self.n_samples,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }
        if self.is_categorical:
            data["levels"] = list(self.left_levels)
        else:
            data["threshold"] = self.threshold
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TreeNode":
        if "leaf" in data:
            return cls(value=float(data["leaf"]), n_samples=int(data.get("n", 0)))
        return cls(
            feature_index=int(data["feature"]),
            threshold=float(data["threshold"]) if "threshold" in data else None,
            left_levels=[int(v) for v in data["levels"]] if "levels" in data else None,
            missing_left=data["missing"] == "left",
            gain=float(data["gain"]),
            n_samples=int(data.get("n", 0)),
            left=cls.from_dict(data["left"]),
            right=cls.from_dict(data["right"]),
        )


@dataclass
class SplitCandidate:
    feature_index: int
    gain: float
    threshold: Optional[float] = None
    left_levels: Optional[List[int]] = None
    missing_left: bool = True


@dataclass
class TreeParams:
    max_depth: int = 3
    min_leaf: int = 20
    categorical_mask: Sequence[bool] = field(default_factory=list)
    bin_edges: Optional[List[Optional[np.ndarray]]] = None  # histogram mode
    n_jobs: int = 1


def histogram_edges(X: np.ndarray, categorical_mask: Sequence[bool], n_bins: int = 256) -> List[Optional[np.ndarray]]:
    """Equal-frequency candidate thresholds per numeric feature"""
    edges: List[Optional[np.ndarray]] = []
    quantiles = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    for j in range(X.shape[1]):
        if categorical_mask[j]:
            edges.append(None)
            continue
        column = X[:, j]
        present = column[~np.isnan(column)]
        if present.size == 0:
            edges.append(np.empty(0))
            continue
        edges.append(np.unique(np.quantile(present, quantiles)))
    return edges


def leaf_value(g: np.ndarray, h: np.ndarray) -> float:
    """One Newton step: sum of gradients over sum of hessians"""
    return float(np.sum(g) / max(float(np.sum(h)), HESSIAN_FLOOR))


def split_gain(g_left, h_left, g_right, h_right, g_total, h_total):
    """Second-order deviance reduction of a split"""
    h_left = np.maximum(h_left, HESSIAN_FLOOR)
    h_right = np.maximum(h_right, HESSIAN_FLOOR)
    parent = g_total * g_total / max(h_total, HESSIAN_FLOOR)
    return 0.5 * (g_left * g_left / h_left + g_right * g_right / h_right - parent)


def _best_over_candidates(
    g_left: np.ndarray,
    h_left: np.ndarray,
    n_left: np.ndarray,
    g_miss: float,
    h_miss: float,
    n_miss: int,
    g_total: float,
    h_total: float,
    n_total: int,
    min_leaf: int
):
    """
    Best (index, gain, missing_left) over candidate left partitions of the
    present values; missing rows are tried on both sides
    """
    g_pres, h_pres = g_total - g_miss, h_total - h_miss
    n_pres = n_total - n_miss
    best_index, best_gain, best_missing_left = -1, -np.inf, True

    for missing_left in (True, False):
        gl = g_left + (g_miss if missing_left else 0.0)
        hl = h_left + (h_miss if missing_left else 0.0)
        nl = n_left + (n_miss if missing_left else 0)
        gr = g_pres - g_left + (0.0 if missing_left else g_miss)
        hr = h_pres - h_left + (0.0 if missing_left else h_miss)
        nr = n_pres - n_left + (0 if missing_left else n_miss)
        gains = split_gain(gl, hl, gr, hr, g_total, h_total)
        gains = np.where((nl >= min_leaf) & (nr >= min_leaf), gains, -np.inf)
        if gains.size == 0:
            continue
        k = int(np.argmax(gains))
        if gains[k] > best_gain:
            best_index, best_gain, best_missing_left = k, float(gains[k]), missing_left
        if n_miss == 0:
            break

    return best_index, best_gain, best_missing_left


def _numeric_split(
    feature_index: int,
    column: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    min_leaf: int,
    edges: Optional[np.ndarray]
) -> Optional[SplitCandidate]:
    missing = np.isnan(column)
    present = ~missing
    xs_unsorted = column[present]
    if xs_unsorted.size < 2:
        return None

    order = np.argsort(xs_unsorted, kind="mergesort")
    xs = xs_unsorted[order]
    cg = np.cumsum(g[present][order])
    ch = np.cumsum(h[present][order])

    if edges is None:
        boundary = np.nonzero(xs[:-1] < xs[1:])[0]
        if boundary.size == 0:
            return None
        lo, hi = xs[boundary], xs[boundary + 1]
        thresholds = 0.5 * (lo + hi)
        thresholds = np.where(thresholds <= lo, hi, thresholds)
        n_left = boundary + 1
    else:
        positions = np.searchsorted(xs, edges, side="left")
        valid = (positions > 0) & (positions < xs.size)
        positions, thresholds = positions[valid], edges[valid]
        if positions.size == 0:
            return None
        positions, first = np.unique(positions, return_index=True)
        thresholds = thresholds[first]
        n_left = positions

    g_miss, h_miss = float(np.sum(g[missing])), float(np.sum(h[missing]))
    n_miss = int(np.count_nonzero(missing))
    k, gain, missing_left = _best_over_candidates(
        cg[n_left - 1], ch[n_left - 1], n_left,
        g_miss, h_miss, n_miss,
        float(np.sum(g)), float(np.sum(h)), column.size, min_leaf
    )
    if k < 0 or not np.isfinite(gain):
        return None
    return SplitCandidate(feature_index, gain, threshold=float(thresholds[k]), missing_left=missing_left)


def _categorical_split(
    feature_index: int,
    column: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    min_leaf: int
) -> Optional[SplitCandidate]:
    missing = np.isnan(column)
    codes = column[~missing].astype(int)
    if codes.size < 2:
        return None

    levels, inverse = np.unique(codes, return_inverse=True)
    if levels.size < 2:
        return None
    if levels.size > MAX_CATEGORICAL_LEVELS:
        raise DataValidationError(
            f"Feature {feature_index} has {levels.size} levels; at most {MAX_CATEGORICAL_LEVELS} supported",
            code="too_many_levels")

    g_level = np.bincount(inverse, weights=g[~missing], minlength=levels.size)
    h_level = np.bincount(inverse, weights=h[~missing], minlength=levels.size)
    n_level = np.bincount(inverse, minlength=levels.size)

    # order by gradient ratio, ties by level code
    ratio = g_level / np.maximum(h_level, HESSIAN_FLOOR)
    order = np.lexsort((levels, ratio))
    cg = np.cumsum(g_level[order])[:-1]
    ch = np.cumsum(h_level[order])[:-1]
    cn = np.cumsum(n_level[order])[:-1]

    g_miss, h_miss = float(np.sum(g[missing])), float(np.sum(h[missing]))
    n_miss = int(np.count_nonzero(missing))
    k, gain, missing_left = _best_over_candidates(
        cg, ch, cn,
        g_miss, h_miss, n_miss,
        float(np.sum(g)), float(np.sum(h)), column.size, min_leaf
    )
    if k < 0 or not np.isfinite(gain):
        return None
    left_levels = sorted(int(v) for v in levels[order[:k + 1]])
    return SplitCandidate(feature_index, gain, left_levels=left_levels, missing_left=missing_left)


def find_best_split(X: np.ndarray, g: np.ndarray, h: np.ndarray, params: TreeParams) -> Optional[SplitCandidate]:
    """
    Best split over all features

    Features may be searched in parallel; the reduction walks features in
    index order and keeps the first strictly larger gain, so the result does
    not depend on scheduling.
    """
    n_features = X.shape[1]

    def search(j: int) -> Optional[SplitCandidate]:
        column = X[:, j]
        if params.categorical_mask and params.categorical_mask[j]:
            return _categorical_split(j, column, g, h, params.min_leaf)
        edges = params.bin_edges[j] if params.bin_edges is not None else None
        return _numeric_split(j, column, g, h, params.min_leaf, edges)

    if params.n_jobs > 1 and n_features > 1:
        with ThreadPoolExecutor(max_workers=params.n_jobs) as pool:
            candidates = list(pool.map(search, range(n_features)))
    else:
        candidates = [search(j) for j in range(n_features)]

    best: Optional[SplitCandidate] = None
    for candidate in candidates:
        if candidate is None:
            continue
        if best is None or candidate.gain > best.gain:
            best = candidate
    return best


def build_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, params: TreeParams, depth: int = 0) -> TreeNode:
    """Grow a tree on pseudo-residuals g with hessian weights h"""
    n = X.shape[0]
    node_value = leaf_value(g, h)

    if depth >= params.max_depth or n < 2 * params.min_leaf:
        return TreeNode(value=node_value, n_samples=n)

    split = find_best_split(X, g, h, params)
    if split is None or split.gain <= 0.0:
        return TreeNode(value=node_value, n_samples=n)

    node = TreeNode(
        feature_index=split.feature_index,
        threshold=split.threshold,
        left_levels=split.left_levels,
        missing_left=split.missing_left,
        gain=split.gain,
        n_samples=n,
    )
    mask = node.goes_left(X[:, split.feature_index])
    node.left = build_tree(X[mask], g[mask], h[mask], params, depth + 1)
    node.right = build_tree(X[~mask], g[~mask], h[~mask], params, depth + 1)
    return node
