"""
Domain Model - Heating seasons, buildings, building features and block-group profiles
"""

import math
from dataclasses import dataclass, field, asdict
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Type


class BasementCode(Enum):
    FULL_OR_PARTIAL = "full_or_partial"
    NONE = "none"
    UNKNOWN = "unknown"


class ProximityCode(Enum):
    DETACHED = "detached"
    SEMI_ATTACHED = "semi_attached"
    ATTACHED = "attached"
    UNKNOWN = "unknown"


class OwnershipType(Enum):
    INDIVIDUAL = "individual"
    CORP = "corp"
    COMPANY = "company"
    OTHER = "other"


class BoilerType(Enum):
    GAS = "gas"
    OIL = "oil"
    ELECTRICITY = "electricity"
    OTHER = "other"
    UNKNOWN = "unknown"


# Level that unrecognised labels collapse to
CATEGORICAL_FALLBACK: Dict[Type[Enum], Enum] = {
    BasementCode: BasementCode.UNKNOWN,
    ProximityCode: ProximityCode.UNKNOWN,
    OwnershipType: OwnershipType.OTHER,
    BoilerType: BoilerType.UNKNOWN,
}

CATEGORICAL_FEATURES: Dict[str, Type[Enum]] = {
    "basement_code": BasementCode,
    "proximity_code": ProximityCode,
    "ownership_type": OwnershipType,
    "boiler_type": BoilerType,
}

NUMERIC_FEATURES = [
    "value_per_sqft",
    "units",
    "area_per_unit",
    "residential_ratio",
    "width",
    "depth",
    "building_age",
    "boiler_age",
]

BOOLEAN_FEATURES = ["has_super"]

# Building input variables in presentation order
FEATURE_ORDER = [
    "value_per_sqft",
    "units",
    "area_per_unit",
    "residential_ratio",
    "width",
    "depth",
    "building_age",
    "basement_code",
    "proximity_code",
    "ownership_type",
    "has_super",
    "boiler_type",
    "boiler_age",
]

# Block-group features compared between under- and over-reporting buildings
PROFILE_FEATURES = [
    "median_rent",
    "race_diversity",
    "vacancy_rate",
    "pct_minority",
    "median_income",
    "pct_limited_english",
    "pct_married",
    "unemployment_rate",
    "pct_over70",
    "pct_white",
    "pct_bachelor_plus",
    "pct_female",
    "pct_living_alone",
]

PROPORTION_FEATURES = [
    "race_diversity",
    "vacancy_rate",
    "pct_minority",
    "pct_limited_english",
    "pct_married",
    "unemployment_rate",
    "pct_over70",
    "pct_white",
    "pct_bachelor_plus",
    "pct_female",
    "pct_living_alone",
]

SEASON_START_MONTH = 10
SEASON_END_MONTH = 5


@dataclass(frozen=True, order=True)
class HeatingSeason:
    """Oct 1 of start_year through May 31 of start_year + 1"""
    start_year: int

    @property
    def start(self) -> datetime:
        return datetime(self.start_year, SEASON_START_MONTH, 1)

    @property
    def end(self) -> datetime:
        # exclusive: June 1 00:00 of the following year
        return datetime(self.start_year + 1, SEASON_END_MONTH + 1, 1)

    @property
    def label(self) -> str:
        return f"{self.start_year}-{self.start_year + 1}"

    def contains(self, timestamp: datetime) -> bool:
        return self.start <= timestamp.replace(tzinfo=None) < self.end


@dataclass(frozen=True)
class FeatureVector:
    """Physical condition and property characteristics of one building; None = missing"""
    value_per_sqft: Optional[float]
    units: Optional[int]
    area_per_unit: Optional[float]
    residential_ratio: Optional[float]
    width: Optional[float]
    depth: Optional[float]
    building_age: Optional[float]
    basement_code: BasementCode
    proximity_code: ProximityCode
    ownership_type: OwnershipType
    has_super: bool
    boiler_type: BoilerType
    boiler_age: Optional[float]

    def violations(self) -> List[Tuple[str, str]]:
        """(field, reason) pairs for every broken invariant"""
        problems: List[Tuple[str, str]] = []
        for name in NUMERIC_FEATURES:
            value = getattr(self, name)
            if value is None:
                continue
            if not math.isfinite(value):
                problems.append((name, "not finite"))
                continue
            if name == "residential_ratio" and not 0.0 <= value <= 1.0:
                problems.append((name, f"{value} outside [0, 1]"))
            elif name == "units" and (value < 1 or float(value) != int(value)):
                problems.append((name, f"{value} is not a positive integer"))
            elif name in ("area_per_unit", "width", "depth") and value <= 0:
                problems.append((name, f"{value} must be > 0"))
            elif name in ("value_per_sqft", "building_age", "boiler_age") and value < 0:
                problems.append((name, f"{value} must be >= 0"))
        return problems

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for name in CATEGORICAL_FEATURES:
            data[name] = data[name].value
        return data


@dataclass(frozen=True)
class BuildingRecord:
    """
    One multiple-dwelling building

    complaint_count and violation_flag are keyed by season start year.
    """
    bbl: str
    block_group_id: str
    x: float
    y: float
    features: FeatureVector
    complaint_count: Dict[int, int] = field(default_factory=dict)
    violation_flag: Dict[int, bool] = field(default_factory=dict)

    @property
    def seasons(self) -> List[int]:
        return sorted(set(self.complaint_count) | set(self.violation_flag))

    def complaints_in(self, season: int) -> int:
        return self.complaint_count.get(season, 0)

    def violated_in(self, season: int) -> bool:
        return self.violation_flag.get(season, False)


@dataclass(frozen=True)
class BlockGroupProfile:
    """Census block group with its demographic and socioeconomic features"""
    block_group_id: str
    population: int
    median_rent: float
    race_diversity: float
    vacancy_rate: float
    pct_minority: float
    median_income: float
    pct_limited_english: float
    pct_married: float
    unemployment_rate: float
    pct_over70: float
    pct_white: float
    pct_bachelor_plus: float
    pct_female: float
    pct_living_alone: float
    race_shares: Dict[str, float] = field(default_factory=dict)

    def feature(self, name: str) -> float:
        return float(getattr(self, name))

    def violations(self) -> List[Tuple[str, str]]:
        problems: List[Tuple[str, str]] = []
        if self.population < 0:
            problems.append(("population", f"{self.population} must be >= 0"))
        for name in PROFILE_FEATURES:
            value = getattr(self, name)
            if not math.isfinite(value):
                problems.append((name, "not finite"))
            elif name in PROPORTION_FEATURES and not 0.0 <= value <= 1.0:
                problems.append((name, f"{value} outside [0, 1]"))
        return problems
