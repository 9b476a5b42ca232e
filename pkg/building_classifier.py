"""
Building Classifier - Cross-classification of predicted violations against observed complaints
"""

import csv
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import DataValidationError

logger = logging.getLogger(__name__)


class BuildingType(Enum):
    """
    Four-way building classification

    TYPE1: no violation predicted, no complaint reported
    TYPE2: violation predicted, but no complaint reported
    TYPE3: no violation predicted, but complaints reported
    TYPE4: violation predicted, and complaints reported
    """
    TYPE1 = "Type1"
    TYPE2 = "Type2"
    TYPE3 = "Type3"
    TYPE4 = "Type4"


class BuildingGroup(Enum):
    AS_EXPECTED = "AsExpected"
    MISMATCHED = "Mismatched"


class ReportingDirection(Enum):
    UNDER_REPORTING = "under_reporting"
    OVER_REPORTING = "over_reporting"


TYPE_ORDER = [BuildingType.TYPE1, BuildingType.TYPE2, BuildingType.TYPE3, BuildingType.TYPE4]

CLASSIFIED_COLUMNS = [
    "bbl",
    "predicted_probability",
    "predicted_violation",
    "complained",
    "complaint_count",
    "type",
    "group",
    "direction",
]


@dataclass(frozen=True)
class ClassifiedBuilding:
    bbl: str
    block_group_id: str
    x: float
    y: float
    predicted_probability: float
    predicted_violation: bool
    complained: bool
    complaint_count: int
    building_type: BuildingType

    @property
    def group(self) -> BuildingGroup:
        return regroup(self.building_type)[0]

    @property
    def direction(self) -> Optional[ReportingDirection]:
        return regroup(self.building_type)[1]


@dataclass
class ClassificationSummary:
    counts: Dict[BuildingType, int]
    shares: Dict[BuildingType, float]
    season: Optional[int]
    threshold: Optional[float]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "season": self.season,
            "threshold": self.threshold,
            "total": self.total,
            "counts": {t.value: self.counts[t] for t in TYPE_ORDER},
            "shares": {t.value: self.shares[t] for t in TYPE_ORDER},
        }


def binarize_complaints(complaint_count: int) -> bool:
    """True when at least one complaint was reported, regardless of volume"""
    if complaint_count < 0:
        raise DataValidationError(f"Negative complaint count {complaint_count}", code="invalid_count")
    return complaint_count >= 1


def classify_building(predicted_violation: bool, complained: bool) -> BuildingType:
    if predicted_violation:
        return BuildingType.TYPE4 if complained else BuildingType.TYPE2
    return BuildingType.TYPE3 if complained else BuildingType.TYPE1


def regroup(building_type: BuildingType) -> Tuple[BuildingGroup, Optional[ReportingDirection]]:
    """AsExpected for types 1 and 4; Mismatched with a reporting direction for 2 and 3"""
    if building_type is BuildingType.TYPE2:
        return BuildingGroup.MISMATCHED, ReportingDirection.UNDER_REPORTING
    if building_type is BuildingType.TYPE3:
        return BuildingGroup.MISMATCHED, ReportingDirection.OVER_REPORTING
    return BuildingGroup.AS_EXPECTED, None


def summarize_counts(
    counts: Dict[BuildingType, int],
    season: Optional[int] = None,
    threshold: Optional[float] = None
) -> ClassificationSummary:
    """Shares over the full classified sample from per-type counts"""
    full = {t: int(counts.get(t, 0)) for t in TYPE_ORDER}
    total = sum(full.values())
    if total <= 0:
        raise DataValidationError("Cannot summarize an empty classification", code="empty_input")
    shares = {t: full[t] / total for t in TYPE_ORDER}
    return ClassificationSummary(counts=full, shares=shares, season=season, threshold=threshold)


def summarize(
    classified: Iterable[ClassifiedBuilding],
    season: Optional[int] = None,
    threshold: Optional[float] = None
) -> ClassificationSummary:
    counts = {t: 0 for t in TYPE_ORDER}
    for building in classified:
        counts[building.building_type] += 1
    return summarize_counts(counts, season=season, threshold=threshold)


def classify_buildings(
    bbls: Sequence[str],
    block_group_ids: Sequence[str],
    coordinates: Sequence[Tuple[float, float]],
    probabilities: np.ndarray,
    complaint_counts: Sequence[int],
    threshold: float
) -> List[ClassifiedBuilding]:
    """
    Threshold predicted probabilities (p >= threshold is a predicted violation)
    and cross them with binarized complaints
    """
    classified = []
    for bbl, block_group_id, (x, y), probability, count in zip(
        bbls, block_group_ids, coordinates, probabilities, complaint_counts
    ):
        predicted = bool(probability >= threshold)
        complained = binarize_complaints(int(count))
        classified.append(ClassifiedBuilding(
            bbl=bbl,
            block_group_id=block_group_id,
            x=float(x),
            y=float(y),
            predicted_probability=float(probability),
            predicted_violation=predicted,
            complained=complained,
            complaint_count=int(count),
            building_type=classify_building(predicted, complained),
        ))
    return classified


def write_classified(classified: Iterable[ClassifiedBuilding], path: str):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CLASSIFIED_COLUMNS + ["block_group_id", "x", "y"])
        for b in classified:
            direction = b.direction
            writer.writerow([
                b.bbl,
                repr(b.predicted_probability),
                "true" if b.predicted_violation else "false",
                "true" if b.complained else "false",
                b.complaint_count,
                b.building_type.value,
                b.group.value,
                direction.value if direction else "",
                b.block_group_id,
                repr(b.x),
                repr(b.y),
            ])


def read_classified(path: str) -> List[ClassifiedBuilding]:
    """Read classified.csv back (handoff between stages)"""
    classified = []
    by_value = {t.value: t for t in BuildingType}
    with open(path, "r", newline="") as f:
        for row in csv.DictReader(f):
            classified.append(ClassifiedBuilding(
                bbl=row["bbl"],
                block_group_id=row["block_group_id"],
                x=float(row["x"]),
                y=float(row["y"]),
                predicted_probability=float(row["predicted_probability"]),
                predicted_violation=row["predicted_violation"] == "true",
                complained=row["complained"] == "true",
                complaint_count=int(row["complaint_count"]),
                building_type=by_value[row["type"]],
            ))
    logger.info(f"Read {len(classified)} classified buildings from {path}")
    return classified


def write_summary(summary: ClassificationSummary, path: str, extra: Optional[Dict[str, Any]] = None):
    data = summary.to_dict()
    if extra:
        data.update(extra)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
