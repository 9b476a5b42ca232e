"""Shared fixtures: record factories, small synthetic cities, run configs"""

import os
from typing import Dict, Optional

import pytest

from config import RunConfig
from models import (
    BasementCode,
    BlockGroupProfile,
    BoilerType,
    BuildingRecord,
    FeatureVector,
    OwnershipType,
    ProximityCode,
)
from synth_city import SynthConfig, generate

SLOW_ENV = "PROPENSITY_SLOW_TESTS"


def pytest_collection_modifyitems(config, items):
    if os.environ.get(SLOW_ENV) == "1":
        return
    skip_slow = pytest.mark.skip(reason=f"set {SLOW_ENV}=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_features(**overrides) -> FeatureVector:
    values = dict(
        value_per_sqft=150.0,
        units=12,
        area_per_unit=850.0,
        residential_ratio=0.9,
        width=40.0,
        depth=90.0,
        building_age=80.0,
        basement_code=BasementCode.FULL_OR_PARTIAL,
        proximity_code=ProximityCode.ATTACHED,
        ownership_type=OwnershipType.CORP,
        has_super=True,
        boiler_type=BoilerType.GAS,
        boiler_age=20.0,
    )
    values.update(overrides)
    return FeatureVector(**values)


def make_building(
    bbl: str,
    block_group_id: str = "bg1",
    x: float = 0.0,
    y: float = 0.0,
    features: Optional[FeatureVector] = None,
    complaints: Optional[Dict[int, int]] = None,
    violations: Optional[Dict[int, bool]] = None
) -> BuildingRecord:
    return BuildingRecord(
        bbl=bbl,
        block_group_id=block_group_id,
        x=x,
        y=y,
        features=features or make_features(),
        complaint_count=dict(complaints or {}),
        violation_flag=dict(violations or {}),
    )


def make_profile(block_group_id: str, **overrides) -> BlockGroupProfile:
    values = dict(
        population=1000,
        median_rent=1300.0,
        race_diversity=0.5,
        vacancy_rate=0.07,
        pct_minority=0.4,
        median_income=55000.0,
        pct_limited_english=0.1,
        pct_married=0.4,
        unemployment_rate=0.08,
        pct_over70=0.09,
        pct_white=0.5,
        pct_bachelor_plus=0.3,
        pct_female=0.52,
        pct_living_alone=0.3,
    )
    values.update(overrides)
    return BlockGroupProfile(block_group_id=block_group_id, **values)


@pytest.fixture
def feature_factory():
    return make_features


@pytest.fixture
def building_factory():
    return make_building


@pytest.fixture
def profile_factory():
    return make_profile


@pytest.fixture(scope="session")
def small_city():
    return generate(SynthConfig(n_buildings=3000, n_block_groups=40, seed=7))


def small_run_config(output_dir: str, seed: int = 11, **sections) -> RunConfig:
    data = {
        "seed": seed,
        "output_dir": output_dir,
        "gbdt": {"n_trees": 15, "max_depth": 3, "min_leaf": 10},
        "kde": {"cell_size": 500.0, "hotspot_quantile": 0.9},
        "synth": {
            "enabled": True,
            "params": {
                "n_buildings": 2500,
                "n_block_groups": 30,
                "violation_base_rate": 0.08,
                "propensity_weights": {"pct_limited_english": -0.8, "median_income": 0.5},
            },
        },
    }
    data.update(sections)
    return RunConfig.from_dict(data)


@pytest.fixture
def run_config(tmp_path):
    return small_run_config(str(tmp_path / "out"))
