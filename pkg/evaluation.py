"""
Evaluation - Confusion matrix, decision-threshold tuning and the metrics report
"""

import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, DataValidationError, NumericalError
from gbdt import BoostedModel

logger = logging.getLogger(__name__)

OBJECTIVES = ("youden", "f1", "balanced")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        predicted = self.tp + self.fp
        return self.tp / predicted if predicted else 0.0

    @property
    def recall(self) -> float:
        return self.tpr

    @property
    def tpr(self) -> float:
        positives = self.tp + self.fn
        return self.tp / positives if positives else 0.0

    @property
    def fpr(self) -> float:
        negatives = self.fp + self.tn
        return self.fp / negatives if negatives else 0.0

    @property
    def tnr(self) -> float:
        negatives = self.fp + self.tn
        return self.tn / negatives if negatives else 0.0

    @property
    def balanced_accuracy(self) -> float:
        return 0.5 * (self.tpr + self.tnr)

    @property
    def f1(self) -> float:
        denominator = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denominator if denominator else 0.0

    def metrics(self) -> Dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "tpr": self.tpr,
            "fpr": self.fpr,
            "balanced_accuracy": self.balanced_accuracy,
            "f1": self.f1,
        }

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass
class Evaluation:
    matrix: ConfusionMatrix
    threshold: float

    @property
    def metrics(self) -> Dict[str, float]:
        return self.matrix.metrics()

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"confusion_matrix": self.matrix.to_dict(), "threshold": self.threshold}
        data.update(self.metrics)
        return data


def confusion_matrix(scores: Sequence[float], labels: Sequence[bool], threshold: float) -> ConfusionMatrix:
    """Scores >= threshold are predicted positive"""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.size != y.size:
        raise DataValidationError(f"{s.size} scores for {y.size} labels", code="dimension_mismatch")
    predicted = s >= threshold
    return ConfusionMatrix(
        tp=int(np.count_nonzero(predicted & y)),
        fp=int(np.count_nonzero(predicted & ~y)),
        tn=int(np.count_nonzero(~predicted & ~y)),
        fn=int(np.count_nonzero(~predicted & y)),
    )


def evaluate(model: BoostedModel, features: np.ndarray, labels: Sequence[bool], threshold: float) -> Evaluation:
    y = np.asarray(labels, dtype=bool)
    if y.size == 0:
        raise DataValidationError("Cannot evaluate on an empty set", code="empty_input")
    scores = model.predict_proba(features)
    return Evaluation(confusion_matrix(scores, y, threshold), threshold)


def threshold_candidates(scores: Sequence[float]) -> np.ndarray:
    """Midpoints between consecutive distinct sorted scores; the lone value when all are equal"""
    distinct = np.unique(np.asarray(scores, dtype=float))
    if distinct.size == 1:
        return distinct
    return 0.5 * (distinct[:-1] + distinct[1:])


def tune_threshold_scores(scores: Sequence[float], labels: Sequence[bool], objective: str = "youden") -> Tuple[float, float]:
    """
    Best (threshold, objective value) over the candidate thresholds

    Ties go to the smaller threshold.
    """
    if objective not in OBJECTIVES:
        raise ConfigError(f"Unknown threshold objective '{objective}'", code="invalid_objective")
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.size != y.size:
        raise DataValidationError(f"{s.size} scores for {y.size} labels", code="dimension_mismatch")
    n_pos = int(np.count_nonzero(y))
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise NumericalError("Threshold tuning needs both classes", code="degenerate_labels")

    candidates = threshold_candidates(s)
    positives = np.sort(s[y])
    negatives = np.sort(s[~y])
    tp = n_pos - np.searchsorted(positives, candidates, side="left")
    fp = n_neg - np.searchsorted(negatives, candidates, side="left")
    tpr = tp / n_pos
    fpr = fp / n_neg

    if objective == "youden":
        values = tpr - fpr
    elif objective == "balanced":
        values = 0.5 * (tpr + (1.0 - fpr))
    else:
        fn = n_pos - tp
        values = 2.0 * tp / np.maximum(2.0 * tp + fp + fn, 1)

    k = int(np.argmax(values))
    return float(candidates[k]), float(values[k])


def tune_threshold(model: BoostedModel, features: np.ndarray, labels: Sequence[bool], objective: str = "youden") -> float:
    """Threshold maximizing the objective over the given rows; the pipeline passes its tuning slice"""
    threshold, value = tune_threshold_scores(model.predict_proba(features), labels, objective)
    logger.info(f"Tuned decision threshold {threshold:.6f} ({objective} = {value:.4f})")
    return threshold


def metrics_report(
    natural: Evaluation,
    balanced: Optional[Evaluation],
    model: BoostedModel,
    importances: List[Tuple[str, float]],
    extra: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    """metrics.json payload"""
    report: Dict[str, Any] = {
        "threshold": model.threshold,
        "natural": natural.to_dict(),
        "balanced": balanced.to_dict() if balanced is not None else None,
        "training_deviance": list(model.deviance_history),
        "feature_importance": [{"feature": name, "importance": value} for name, value in importances],
        "training_meta": dict(model.training_meta),
    }
    if extra:
        report.update(extra)
    return report


def write_metrics(report: Dict[str, Any], path: str):
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
