"""
Gradient Boosting - Binary violation classifier on building attributes

Stagewise additive log-odds model: every round grows a regression tree on the
logistic-loss gradients of the current model and sets its leaves by one
Newton step. The majority class is under-sampled before fitting.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import GBDTConfig, rng_for
from data_loader import training_labels
from errors import ConfigError, DataValidationError, NumericalError
from models import BuildingRecord
from tree_builder import TreeNode, TreeParams, build_tree, histogram_edges

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
PROBABILITY_FLOOR = 1e-15
MAX_BACKTRACK_STEPS = 30


@dataclass
class BoostParams:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 20
    seed: int = 42
    undersample_ratio: Optional[float] = 1.0  # None trains on every row
    split_mode: str = "exact"
    n_bins: int = 256
    n_jobs: int = 1

    @classmethod
    def from_config(cls, config: GBDTConfig, seed: int) -> "BoostParams":
        return cls(
            n_trees=config.n_trees,
            max_depth=config.max_depth,
            learning_rate=config.learning_rate,
            min_leaf=config.min_leaf,
            seed=seed,
            undersample_ratio=config.undersample_ratio,
            split_mode=config.split_mode,
            n_bins=config.n_bins,
            n_jobs=config.n_jobs,
        )


@dataclass
class BoostedModel:
    """
    Fitted ensemble

    predict_proba = sigmoid(base_score + learning_rate * sum of tree outputs).
    threshold is None until tuned.
    """
    trees: List[TreeNode]
    learning_rate: float
    base_score: float
    feature_names: List[str]
    categorical_mask: List[bool] = field(default_factory=list)
    threshold: Optional[float] = None
    training_meta: Dict[str, Any] = field(default_factory=dict)
    deviance_history: List[float] = field(default_factory=list)
    encoder: Optional[Dict[str, Any]] = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        X = self._check_matrix(X)
        total = np.zeros(X.shape[0], dtype=float)
        for tree in self.trees:
            total = total + tree.predict(X)
        return self.base_score + self.learning_rate * total

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.raw_score(X))

    def _check_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataValidationError(
                f"Expected {self.n_features} features per row, got shape {X.shape}",
                code="dimension_mismatch"
            )
        return X

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "threshold": self.threshold,
            "feature_names": list(self.feature_names),
            "categorical_mask": list(self.categorical_mask),
            "training_meta": dict(self.training_meta),
            "deviance_history": list(self.deviance_history),
            "encoder": self.encoder,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BoostedModel":
        version = data.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise DataValidationError(f"Unsupported model format_version {version!r}", code="invalid_model")
        return cls(
            trees=[TreeNode.from_dict(t) for t in data["trees"]],
            learning_rate=float(data["learning_rate"]),
            base_score=float(data["base_score"]),
            feature_names=list(data["feature_names"]),
            categorical_mask=[bool(v) for v in data.get("categorical_mask", [])],
            threshold=None if data.get("threshold") is None else float(data["threshold"]),
            training_meta=dict(data.get("training_meta", {})),
            deviance_history=[float(v) for v in data.get("deviance_history", [])],
            encoder=data.get("encoder"),
        )


@dataclass
class TrainValidationSplit:
    """Building indices and labels for model fitting, threshold tuning and held-out evaluation"""
    training_seasons: List[int]
    target_season: int
    train_index: np.ndarray
    eval_index: np.ndarray
    train_labels: np.ndarray
    eval_labels: np.ndarray
    tune_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    tune_labels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))


def sigmoid(raw: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + np.exp(-np.asarray(raw, dtype=float)))
    return np.clip(p, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)


def binomial_deviance(labels: np.ndarray, raw: np.ndarray) -> float:
    """Mean logistic loss log(1 + exp(-s F)) with s = +-1"""
    signs = np.where(labels, 1.0, -1.0)
    return float(np.mean(np.logaddexp(0.0, -signs * raw)))


def _class_counts(labels: np.ndarray) -> Tuple[int, int]:
    n_pos = int(np.count_nonzero(labels))
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise NumericalError(
            f"Labels are single-class ({n_pos} positive, {n_neg} negative)",
            code="degenerate_labels"
        )
    return n_pos, n_neg


def undersample_majority(labels: Sequence[bool], ratio: float = 1.0, seed: int = 42) -> List[int]:
    """
    Keep every minority row and ceil(ratio * n_minority) majority rows

    Majority rows are drawn uniformly without replacement; the returned
    indices are sorted.
    """
    if ratio <= 0:
        raise ConfigError(f"Under-sampling ratio must be positive, got {ratio}", code="invalid_ratio")
    y = np.asarray(labels, dtype=bool)
    n_pos, n_neg = _class_counts(y)

    minority_label = n_pos <= n_neg
    minority = np.flatnonzero(y == minority_label)
    majority = np.flatnonzero(y != minority_label)
    n_keep = min(majority.size, int(math.ceil(ratio * minority.size)))

    rng = rng_for(seed, "sampling")
    kept = rng.choice(majority, size=n_keep, replace=False) if n_keep < majority.size else majority
    index = np.sort(np.concatenate([minority, kept]))
    logger.info(f"Under-sampled majority class: {majority.size} -> {n_keep} rows "
                f"(minority {minority.size}, ratio {ratio})")
    return [int(i) for i in index]


def fit(
    X: np.ndarray,
    labels: Sequence[bool],
    params: BoostParams,
    feature_names: Optional[Sequence[str]] = None,
    categorical_mask: Optional[Sequence[bool]] = None
) -> BoostedModel:
    """
    Fit a boosted ensemble

    A round whose tree would raise the training deviance has its leaves halved
    until it does not; a round that still cannot improve ends training, which
    training_meta records as stopped_early with n_trees_fitted < n_trees.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataValidationError(f"Feature matrix shape {X.shape} does not match {y.size} labels",
                                  code="dimension_mismatch")
    if np.any(np.isinf(X)):
        raise NumericalError("Feature matrix holds infinite values", code="non_finite_features")

    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(X.shape[1])]
    mask = list(categorical_mask) if categorical_mask is not None else [False] * X.shape[1]
    if len(names) != X.shape[1] or len(mask) != X.shape[1]:
        raise DataValidationError("feature_names/categorical_mask length differs from matrix width",
                                  code="dimension_mismatch")

    if params.undersample_ratio is not None:
        index = np.asarray(undersample_majority(y, params.undersample_ratio, params.seed))
        X, y = X[index], y[index]
    n_pos, n_neg = _class_counts(y)
    if X.shape[0] < 2:
        raise DataValidationError("Need at least 2 training rows", code="empty_input")

    base_score = math.log(n_pos / n_neg)
    tree_params = TreeParams(
        max_depth=params.max_depth,
        min_leaf=params.min_leaf,
        categorical_mask=mask,
        bin_edges=histogram_edges(X, mask, params.n_bins) if params.split_mode == "histogram" else None,
        n_jobs=params.n_jobs,
    )

    target = y.astype(float)
    raw_sum = np.zeros(X.shape[0], dtype=float)
    raw = base_score + params.learning_rate * raw_sum
    deviance = binomial_deviance(y, raw)
    history = [deviance]
    trees: List[TreeNode] = []

    logger.info(f"Fitting {params.n_trees} trees (depth {params.max_depth}, lr {params.learning_rate}) "
                f"on {X.shape[0]} rows x {X.shape[1]} features, {n_pos} positive")

    for round_index in range(params.n_trees):
        p = sigmoid(raw)
        gradient = target - p
        hessian = p * (1.0 - p)
        tree = build_tree(X, gradient, hessian, tree_params)

        accepted = False
        for _ in range(MAX_BACKTRACK_STEPS + 1):
            candidate_sum = raw_sum + tree.predict(X)
            candidate_raw = base_score + params.learning_rate * candidate_sum
            candidate_deviance = binomial_deviance(y, candidate_raw)
            if candidate_deviance <= deviance:
                accepted = True
                break
            tree.scale_leaves(0.5)

        if not accepted:
            logger.warning(f"Stopping after {round_index} of {params.n_trees} trees: no deviance decrease")
            break

        trees.append(tree)
        raw_sum, raw, deviance = candidate_sum, candidate_raw, candidate_deviance
        history.append(deviance)
        if (round_index + 1) % 50 == 0:
            logger.debug(f"Round {round_index + 1}: training deviance {deviance:.6f}")

    logger.info(f"Fitted {len(trees)} trees; training deviance {history[0]:.4f} -> {history[-1]:.4f}")
    return BoostedModel(
        trees=trees,
        learning_rate=params.learning_rate,
        base_score=base_score,
        feature_names=names,
        categorical_mask=mask,
        training_meta={
            "seed": params.seed,
            "n_trees": params.n_trees,
            "n_trees_fitted": len(trees),
            "stopped_early": len(trees) < params.n_trees,
            "max_depth": params.max_depth,
            "learning_rate": params.learning_rate,
            "min_leaf": params.min_leaf,
            "undersample_ratio": params.undersample_ratio,
            "split_mode": params.split_mode,
            "n_rows": int(X.shape[0]),
            "n_positive": n_pos,
        },
        deviance_history=history,
    )


def predict_proba(model: BoostedModel, features: np.ndarray) -> np.ndarray:
    """Probabilities for a row or a matrix of rows, strictly inside (0, 1)"""
    return model.predict_proba(features)


def feature_importance(model: BoostedModel) -> List[Tuple[str, float]]:
    """Split gain per feature normalized to sum to 1, highest first"""
    totals = np.zeros(model.n_features, dtype=float)
    for tree in model.trees:
        for node in tree.iter_nodes():
            if not node.is_leaf:
                totals[node.feature_index] += node.gain
    grand = float(totals.sum())
    if grand <= 0.0:
        return []
    shares = totals / grand
    order = sorted(range(model.n_features), key=lambda j: (-shares[j], j))
    return [(model.feature_names[j], float(shares[j])) for j in order]


def save_model(model: BoostedModel, path: str):
    with open(path, "w") as f:
        json.dump(model.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    logger.info(f"Saved model with {len(model.trees)} trees to {path}")


def load_model(path: str) -> BoostedModel:
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise DataValidationError(f"Model file not found: {path}", code="missing_file") from e
    return BoostedModel.from_dict(data)


def train_validation_split(
    buildings: Sequence[BuildingRecord],
    target_season: Optional[int] = None,
    training_seasons: Optional[Sequence[int]] = None,
    holdout_fraction: float = 0.2,
    seed: int = 42,
    tuning_fraction: float = 0.2
) -> TrainValidationSplit:
    """
    Season-based protocol with held-out building samples

    Training labels: any violation over the training seasons (every observed
    season before the target unless given). Evaluation labels: violation in
    the target season. When only one season exists it serves both roles.

    tuning_fraction of the non-evaluation buildings is set aside for threshold
    tuning with training-season labels; 0 leaves the tuning slice empty.
    """
    observed = sorted({s for b in buildings for s in b.seasons})
    if not observed:
        raise DataValidationError("No season columns found on buildings", code="empty_input")
    if not 0.0 <= tuning_fraction < 1.0:
        raise ConfigError(f"tuning_fraction must be in [0, 1), got {tuning_fraction}", code="invalid_config")

    target = observed[-1] if target_season is None else int(target_season)
    if training_seasons is None:
        seasons = [s for s in observed if s < target] or [target]
    else:
        seasons = sorted(int(s) for s in training_seasons)
    if target not in observed:
        logger.warning(f"Target season {target} has no observations; every evaluation label is False")

    n = len(buildings)
    n_eval = int(round(holdout_fraction * n))
    if n_eval < 1 or n_eval >= n:
        raise DataValidationError(f"Cannot hold out {holdout_fraction} of {n} buildings", code="empty_input")
    n_tune = int(round(tuning_fraction * (n - n_eval)))
    if n_eval + n_tune >= n:
        raise DataValidationError(f"No training buildings left after holding out {n_eval} + {n_tune}",
                                  code="empty_input")

    order = rng_for(seed, "split").permutation(n)
    eval_index = np.sort(order[:n_eval])
    tune_index = np.sort(order[n_eval:n_eval + n_tune])
    train_index = np.sort(order[n_eval + n_tune:])
    train_labels = training_labels([buildings[i] for i in train_index], seasons)
    tune_labels = training_labels([buildings[i] for i in tune_index], seasons)
    eval_labels = training_labels([buildings[i] for i in eval_index], [target])

    logger.info(f"Training on seasons {seasons} ({train_index.size} buildings, "
                f"{int(train_labels.sum())} positive; {tune_index.size} set aside for the threshold); "
                f"evaluating season {target} ({eval_index.size} buildings, {int(eval_labels.sum())} positive)")
    return TrainValidationSplit(
        training_seasons=seasons,
        target_season=target,
        train_index=train_index,
        eval_index=eval_index,
        train_labels=train_labels,
        eval_labels=eval_labels,
        tune_index=tune_index,
        tune_labels=tune_labels,
    )
