"""Tests for the design-matrix encoder"""

import numpy as np
import pytest

from features import FeatureEncoder
from models import FEATURE_ORDER, BoilerType, OwnershipType


def test_columns_and_codes(building_factory, feature_factory):
    records = [
        building_factory("1", features=feature_factory(boiler_type=BoilerType.OIL, has_super=False)),
        building_factory("2", features=feature_factory(ownership_type=OwnershipType.OTHER)),
    ]
    encoder = FeatureEncoder.fit(records)
    X = encoder.transform(records)

    assert encoder.feature_names == FEATURE_ORDER
    assert X.shape == (2, len(FEATURE_ORDER))
    boiler = FEATURE_ORDER.index("boiler_type")
    ownership = FEATURE_ORDER.index("ownership_type")
    has_super = FEATURE_ORDER.index("has_super")
    assert X[0, boiler] == list(BoilerType).index(BoilerType.OIL)
    assert X[1, ownership] == list(OwnershipType).index(OwnershipType.OTHER)
    assert X[:, has_super].tolist() == [0.0, 1.0]
    assert encoder.categorical_mask[boiler] and not encoder.categorical_mask[has_super]


def test_median_imputation_with_flag(building_factory, feature_factory):
    records = [
        building_factory("1", features=feature_factory(boiler_age=10.0)),
        building_factory("2", features=feature_factory(boiler_age=30.0)),
        building_factory("3", features=feature_factory(boiler_age=None)),
    ]
    encoder = FeatureEncoder.fit(records)
    X = encoder.transform(records)

    assert encoder.flag_features == ["boiler_age"]
    assert encoder.feature_names[-1] == "boiler_age_missing"
    column = FEATURE_ORDER.index("boiler_age")
    assert X[:, column].tolist() == [10.0, 30.0, 20.0]
    assert X[:, -1].tolist() == [0.0, 0.0, 1.0]


def test_training_medians_apply_to_new_rows(building_factory, feature_factory):
    train = [building_factory(str(i), features=feature_factory(building_age=float(a)))
             for i, a in enumerate([10, 20, 30])]
    encoder = FeatureEncoder.fit(train)
    new = [building_factory("x", features=feature_factory(building_age=None))]
    X = encoder.transform(new)

    # no flag column was learned, the value is still imputed
    assert X.shape[1] == len(FEATURE_ORDER)
    assert X[0, FEATURE_ORDER.index("building_age")] == 20.0


def test_serialization(building_factory, feature_factory):
    records = [building_factory("1", features=feature_factory(boiler_age=None)),
               building_factory("2")]
    encoder = FeatureEncoder.fit(records)
    restored = FeatureEncoder.from_dict(encoder.to_dict())
    assert restored == encoder
    np.testing.assert_array_equal(restored.transform(records), encoder.transform(records))


def test_levels_listing():
    levels = FeatureEncoder.categorical_levels()
    assert levels["boiler_type"] == ["gas", "oil", "electricity", "other", "unknown"]
    assert len(levels) == 4
