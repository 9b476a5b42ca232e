"""
Feature Encoding - Building records to a numeric design matrix
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import numpy as np

from models import BOOLEAN_FEATURES, CATEGORICAL_FEATURES, FEATURE_ORDER, NUMERIC_FEATURES, BuildingRecord

logger = logging.getLogger(__name__)

MISSING_SUFFIX = "_missing"


@dataclass
class FeatureEncoder:
    """
    Design-matrix encoder fitted on training buildings

    Columns follow FEATURE_ORDER; categoricals become integer level codes,
    booleans 0/1. Missing numerics are imputed with the training median and
    every numeric feature that had missing values in training gets a
    `<name>_missing` indicator column appended.
    """
    medians: Dict[str, float] = field(default_factory=dict)
    flag_features: List[str] = field(default_factory=list)

    @classmethod
    def fit(cls, records: Sequence[BuildingRecord]) -> "FeatureEncoder":
        medians: Dict[str, float] = {}
        flags: List[str] = []
        for name in NUMERIC_FEATURES:
            values = [getattr(r.features, name) for r in records]
            present = np.array([v for v in values if v is not None], dtype=float)
            medians[name] = float(np.median(present)) if present.size else 0.0
            if present.size < len(values):
                flags.append(name)
        if flags:
            logger.info(f"Median-imputing with missingness flags for: {flags}")
        return cls(medians=medians, flag_features=flags)

    @property
    def feature_names(self) -> List[str]:
        return list(FEATURE_ORDER) + [f"{name}{MISSING_SUFFIX}" for name in self.flag_features]

    @property
    def categorical_mask(self) -> List[bool]:
        return [name in CATEGORICAL_FEATURES for name in self.feature_names]

    @staticmethod
    def categorical_levels() -> Dict[str, List[str]]:
        return {name: [level.value for level in enum_type] for name, enum_type in CATEGORICAL_FEATURES.items()}

    def transform(self, records: Sequence[BuildingRecord]) -> np.ndarray:
        names = self.feature_names
        matrix = np.empty((len(records), len(names)), dtype=float)
        level_codes = {
            name: {level: code for code, level in enumerate(enum_type)}
            for name, enum_type in CATEGORICAL_FEATURES.items()
        }

        for i, record in enumerate(records):
            features = record.features
            for j, name in enumerate(FEATURE_ORDER):
                value = getattr(features, name)
                if name in CATEGORICAL_FEATURES:
                    matrix[i, j] = level_codes[name][value]
                elif name in BOOLEAN_FEATURES:
                    matrix[i, j] = 1.0 if value else 0.0
                else:
                    matrix[i, j] = self.medians[name] if value is None else float(value)
            offset = len(FEATURE_ORDER)
            for k, name in enumerate(self.flag_features):
                matrix[i, offset + k] = 1.0 if getattr(features, name) is None else 0.0
        return matrix

    def to_dict(self) -> Dict[str, Any]:
        return {"medians": dict(self.medians), "flag_features": list(self.flag_features)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureEncoder":
        return cls(medians={k: float(v) for k, v in data["medians"].items()},
                   flag_features=list(data["flag_features"]))
