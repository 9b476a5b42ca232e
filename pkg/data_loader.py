"""
Data Loader - CSV ingestion, heating-season windowing, event attachment and per-capita rates
"""

import csv
import logging
import math
import os
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Type

import numpy as np
import pandas as pd

from errors import DataValidationError
from hypothesis_tests import race_diversity
from logging_utils import create_throttled_logger
from models import (
    BOOLEAN_FEATURES,
    CATEGORICAL_FALLBACK,
    CATEGORICAL_FEATURES,
    FEATURE_ORDER,
    NUMERIC_FEATURES,
    PROFILE_FEATURES,
    SEASON_END_MONTH,
    SEASON_START_MONTH,
    BlockGroupProfile,
    BuildingRecord,
    FeatureVector,
    HeatingSeason,
)

logger = logging.getLogger(__name__)
row_logger = create_throttled_logger(__name__ + ".rows")

BUILDING_KEY_COLUMNS = ["bbl", "x", "y", "block_group_id"]
BUILDING_COLUMNS = BUILDING_KEY_COLUMNS + FEATURE_ORDER
EVENT_COLUMNS = ["bbl", "timestamp"]
BLOCKGROUP_COLUMNS = ["block_group_id", "population"] + [f for f in PROFILE_FEATURES if f != "race_diversity"]

RACE_PREFIX = "race_"
SEASON_COLUMN = re.compile(r"^(complaints|violation)_(\d{4})$")
SHARE_TOLERANCE = 1e-9

TRUE_LABELS = {"true", "t", "1", "yes", "y"}
FALSE_LABELS = {"false", "f", "0", "no", "n"}


@dataclass
class RowReject:
    row: int
    field: str
    reason: str


@dataclass
class LoadReport:
    """Per-file ingestion diagnostics"""
    path: str
    rows_read: int = 0
    rows_loaded: int = 0
    rejects: List[RowReject] = field(default_factory=list)

    @property
    def rows_rejected(self) -> int:
        return len({r.row for r in self.rejects})

    def reject(self, row: int, field_name: str, reason: str):
        self.rejects.append(RowReject(row, field_name, reason))
        row_logger.warning(f"{os.path.basename(self.path)} row {row}: {field_name}: {reason}",
                           key=f"{self.path}:reject")


@dataclass
class AttachReport:
    """Counters for event attachment"""
    complaints_retained: int = 0
    violations_retained: int = 0
    off_season_complaints: int = 0
    off_season_violations: int = 0
    unmatched_complaints: int = 0
    unmatched_violations: int = 0
    unmatched_bbls: List[str] = field(default_factory=list)
    seasons: List[int] = field(default_factory=list)


@dataclass(frozen=True)
class BlockGroupRate:
    block_group_id: str
    requests: int
    population: int
    rate: Optional[float]

    @property
    def undefined_rate(self) -> bool:
        return self.rate is None


class _RowError(Exception):
    def __init__(self, field_name: str, reason: str):
        super().__init__(reason)
        self.field_name = field_name
        self.reason = reason


def _read_csv(path: str, required: Sequence[str], columns: Optional[Dict[str, str]]) -> pd.DataFrame:
    """Read a CSV as strings and rename source columns to field names"""
    if not os.path.exists(path):
        raise DataValidationError(f"File not found: {path}", code="missing_file")

    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if columns:
        frame = frame.rename(columns={src: name for name, src in columns.items()})

    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataValidationError(
            f"{os.path.basename(path)}: missing required column(s) {missing}",
            code="missing_column",
            details={"path": path, "missing": missing}
        )
    return frame


def _parse_float(raw: str, name: str, required: bool = False) -> Optional[float]:
    text = raw.strip()
    if text == "":
        if required:
            raise _RowError(name, "missing value")
        return None
    try:
        return float(text)
    except ValueError:
        raise _RowError(name, f"unparsable number '{raw}'")


def _parse_bool(raw: str, name: str) -> bool:
    text = raw.strip().lower()
    if text in TRUE_LABELS:
        return True
    if text in FALSE_LABELS:
        return False
    raise _RowError(name, f"unparsable boolean '{raw}'")


def _parse_category(raw: str, name: str, enum_type: Type[Enum], unknown_policy: str) -> Enum:
    text = raw.strip().lower().replace("-", "_").replace(" ", "_")
    for level in enum_type:
        if level.value == text:
            return level
    if unknown_policy == "reject":
        raise _RowError(name, f"unknown level '{raw}'")
    return CATEGORICAL_FALLBACK[enum_type]


def _parse_features(row: Dict[str, str], unknown_policy: str) -> FeatureVector:
    values = {}
    for name in NUMERIC_FEATURES:
        values[name] = _parse_float(row[name], name)
    if values["units"] is not None and math.isfinite(values["units"]) and values["units"] == int(values["units"]):
        values["units"] = int(values["units"])
    for name, enum_type in CATEGORICAL_FEATURES.items():
        values[name] = _parse_category(row[name], name, enum_type, unknown_policy)
    for name in BOOLEAN_FEATURES:
        values[name] = _parse_bool(row[name], name)
    return FeatureVector(**values)


def load_buildings(
    path: str,
    columns: Optional[Dict[str, str]] = None,
    unknown_policy: str = "collapse"
) -> Tuple[List[BuildingRecord], LoadReport]:
    """
    Load buildings.csv into validated records

    Rows breaking a feature invariant or holding unparsable numbers are
    rejected and reported; a duplicate bbl fails the whole load.
    Row numbers count data rows from 1 (header excluded).
    """
    frame = _read_csv(path, BUILDING_COLUMNS, columns)
    report = LoadReport(path=path, rows_read=len(frame))

    season_columns: Dict[str, Tuple[str, int]] = {}
    for column in frame.columns:
        match = SEASON_COLUMN.match(column)
        if match:
            season_columns[column] = (match.group(1), int(match.group(2)))

    first_seen: Dict[str, int] = {}
    for idx, bbl in enumerate(frame["bbl"].tolist(), start=1):
        key = bbl.strip()
        if not key:
            continue
        if key in first_seen:
            raise DataValidationError(
                f"Duplicate bbl '{key}' in rows {first_seen[key]} and {idx}",
                code="duplicate_bbl",
                details={"bbl": key, "rows": [first_seen[key], idx]}
            )
        first_seen[key] = idx

    records: List[BuildingRecord] = []
    for idx, row in enumerate(frame.to_dict(orient="records"), start=1):
        try:
            bbl = row["bbl"].strip()
            if not bbl:
                raise _RowError("bbl", "empty identifier")
            block_group_id = row["block_group_id"].strip()
            if not block_group_id:
                raise _RowError("block_group_id", "empty identifier")
            x = _parse_float(row["x"], "x", required=True)
            y = _parse_float(row["y"], "y", required=True)
            if not (math.isfinite(x) and math.isfinite(y)):
                raise _RowError("x" if not math.isfinite(x) else "y", "not finite")
            features = _parse_features(row, unknown_policy)

            complaint_count: Dict[int, int] = {}
            violation_flag: Dict[int, bool] = {}
            for column, (kind, year) in season_columns.items():
                if row[column].strip() == "":
                    continue
                if kind == "complaints":
                    count = _parse_float(row[column], column, required=True)
                    if not math.isfinite(count) or count < 0 or count != int(count):
                        raise _RowError(column, f"{row[column]} is not a non-negative integer")
                    complaint_count[year] = int(count)
                else:
                    violation_flag[year] = _parse_bool(row[column], column)
        except _RowError as e:
            report.reject(idx, e.field_name, e.reason)
            continue

        problems = features.violations()
        if problems:
            for field_name, reason in problems:
                report.reject(idx, field_name, reason)
            continue

        records.append(BuildingRecord(
            bbl=bbl,
            block_group_id=block_group_id,
            x=x,
            y=y,
            features=features,
            complaint_count=complaint_count,
            violation_flag=violation_flag,
        ))

    report.rows_loaded = len(records)
    row_logger.flush()
    logger.info(f"Loaded {len(records)} buildings from {path} ({report.rows_rejected} rejected)")
    return records, report


def _format_number(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def write_buildings(records: Iterable[BuildingRecord], path: str):
    """Write records in the buildings.csv schema, with per-season outcome columns"""
    records = list(records)
    seasons = sorted({s for r in records for s in r.seasons})
    header = BUILDING_COLUMNS + [f"complaints_{s}" for s in seasons] + [f"violation_{s}" for s in seasons]

    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for record in records:
            features = record.features.to_dict()
            row = [record.bbl, _format_number(record.x), _format_number(record.y), record.block_group_id]
            for name in FEATURE_ORDER:
                value = features[name]
                row.append(value if isinstance(value, str) else _format_number(value))
            for season in seasons:
                row.append(str(record.complaint_count[season]) if season in record.complaint_count else "")
            for season in seasons:
                row.append(_format_number(record.violation_flag[season]) if season in record.violation_flag else "")
            writer.writerow(row)


def load_blockgroups(
    path: str,
    columns: Optional[Dict[str, str]] = None
) -> Tuple[Dict[str, BlockGroupProfile], LoadReport]:
    """
    Load blockgroups.csv

    Race share columns (race_<group>) must sum to 1; race_diversity is
    computed from them. Without share columns a race_diversity column is required.
    """
    frame = _read_csv(path, BLOCKGROUP_COLUMNS, columns)
    race_columns = [c for c in frame.columns if c.startswith(RACE_PREFIX)]
    if not race_columns and "race_diversity" not in frame.columns:
        raise DataValidationError(
            f"{os.path.basename(path)}: needs race_<group> share columns or race_diversity",
            code="missing_column"
        )

    report = LoadReport(path=path, rows_read=len(frame))
    profiles: Dict[str, BlockGroupProfile] = {}
    first_seen: Dict[str, int] = {}

    for idx, row in enumerate(frame.to_dict(orient="records"), start=1):
        block_group_id = row["block_group_id"].strip()
        if block_group_id in first_seen:
            raise DataValidationError(
                f"Duplicate block_group_id '{block_group_id}' in rows {first_seen[block_group_id]} and {idx}",
                code="duplicate_block_group"
            )
        if block_group_id:
            first_seen[block_group_id] = idx
        shares: Dict[str, float] = {}
        try:
            if not block_group_id:
                raise _RowError("block_group_id", "empty identifier")
            population = _parse_float(row["population"], "population", required=True)
            if not math.isfinite(population) or population < 0 or population != int(population):
                raise _RowError("population", f"{row['population']} is not a non-negative integer")
            values = {
                name: _parse_float(row[name], name, required=True)
                for name in PROFILE_FEATURES if name != "race_diversity"
            }
            if race_columns:
                for column in race_columns:
                    share = _parse_float(row[column], column, required=True)
                    if not 0.0 <= share <= 1.0:
                        raise _RowError(column, f"share {share} outside [0, 1]")
                    shares[column[len(RACE_PREFIX):]] = share
                if abs(sum(shares.values()) - 1.0) > SHARE_TOLERANCE:
                    raise _RowError("race_shares", f"shares sum to {sum(shares.values())!r}, not 1")
                values["race_diversity"] = race_diversity(list(shares.values()))
            else:
                values["race_diversity"] = _parse_float(row["race_diversity"], "race_diversity", required=True)
        except _RowError as e:
            report.reject(idx, e.field_name, e.reason)
            continue

        profile = BlockGroupProfile(
            block_group_id=block_group_id,
            population=int(population),
            race_shares=shares,
            **values
        )
        problems = profile.violations()
        if problems:
            for field_name, reason in problems:
                report.reject(idx, field_name, reason)
            continue
        profiles[block_group_id] = profile

    report.rows_loaded = len(profiles)
    row_logger.flush()
    logger.info(f"Loaded {len(profiles)} block groups from {path} ({report.rows_rejected} rejected)")
    return profiles, report


def parse_timestamp(raw: str) -> datetime:
    """ISO-8601 timestamp, timezone dropped"""
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1]
    return datetime.fromisoformat(text).replace(tzinfo=None)


def load_events(path: str, columns: Optional[Dict[str, str]] = None) -> Tuple[List[Tuple[str, datetime]], LoadReport]:
    """Load complaints.csv or violations.csv as (bbl, timestamp) pairs"""
    frame = _read_csv(path, EVENT_COLUMNS, columns)
    report = LoadReport(path=path, rows_read=len(frame))
    events: List[Tuple[str, datetime]] = []

    for idx, (bbl, raw) in enumerate(zip(frame["bbl"].tolist(), frame["timestamp"].tolist()), start=1):
        key = bbl.strip()
        if not key:
            report.reject(idx, "bbl", "empty identifier")
            continue
        try:
            events.append((key, parse_timestamp(raw)))
        except ValueError:
            report.reject(idx, "timestamp", f"unparsable timestamp '{raw}'")

    report.rows_loaded = len(events)
    row_logger.flush()
    logger.info(f"Loaded {len(events)} events from {path} ({report.rows_rejected} rejected)")
    return events, report


def write_rejections(rejects: Iterable[RowReject], path: str):
    """Rejection report: row, field, reason"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["row", "field", "reason"])
        for reject in rejects:
            writer.writerow([reject.row, reject.field, reject.reason])


def season_of(timestamp: datetime) -> Optional[HeatingSeason]:
    """Heating season containing the timestamp; None for June through September"""
    if timestamp.month >= SEASON_START_MONTH:
        return HeatingSeason(timestamp.year)
    if timestamp.month <= SEASON_END_MONTH:
        return HeatingSeason(timestamp.year - 1)
    return None


def attach_events(
    buildings: Sequence[BuildingRecord],
    complaints: Iterable[Tuple[str, datetime]],
    violations: Iterable[Tuple[str, datetime]],
    seasons: Optional[Iterable[int]] = None
) -> Tuple[List[BuildingRecord], AttachReport]:
    """
    Window complaint and violation events into heating seasons per building

    Every returned record has a complaint count and a violation flag for each
    observed season (the given seasons, else every season any retained event
    falls in). Off-season events are dropped and counted; events whose bbl is
    not in the dataset are reported.
    """
    known = {b.bbl for b in buildings}
    report = AttachReport()
    counts: Dict[str, Dict[int, int]] = defaultdict(lambda: defaultdict(int))
    flags: Dict[str, set] = defaultdict(set)
    observed = set(seasons) if seasons is not None else set()
    unmatched = set()

    for bbl, timestamp in complaints:
        season = season_of(timestamp)
        if season is None:
            report.off_season_complaints += 1
            continue
        if bbl not in known:
            report.unmatched_complaints += 1
            unmatched.add(bbl)
            continue
        if seasons is not None and season.start_year not in observed:
            continue
        counts[bbl][season.start_year] += 1
        report.complaints_retained += 1
        if seasons is None:
            observed.add(season.start_year)

    for bbl, timestamp in violations:
        season = season_of(timestamp)
        if season is None:
            report.off_season_violations += 1
            continue
        if bbl not in known:
            report.unmatched_violations += 1
            unmatched.add(bbl)
            continue
        if seasons is not None and season.start_year not in observed:
            continue
        flags[bbl].add(season.start_year)
        report.violations_retained += 1
        if seasons is None:
            observed.add(season.start_year)

    report.seasons = sorted(observed)
    report.unmatched_bbls = sorted(unmatched)
    if unmatched:
        logger.warning(f"{len(unmatched)} event bbls not found among buildings")
    if report.off_season_complaints or report.off_season_violations:
        logger.info(f"Dropped off-season events: {report.off_season_complaints} complaints, "
                    f"{report.off_season_violations} violations")

    attached = []
    for building in buildings:
        attached.append(replace(
            building,
            complaint_count={s: counts[building.bbl].get(s, 0) for s in report.seasons},
            violation_flag={s: s in flags[building.bbl] for s in report.seasons},
        ))
    return attached, report


def per_capita_rate(request_count: int, population: int) -> Optional[float]:
    """Requests per person; None flags an undefined rate (population 0)"""
    if request_count < 0:
        raise DataValidationError(f"Negative request count {request_count}", code="invalid_count")
    if population < 0:
        raise DataValidationError(f"Negative population {population}", code="invalid_count")
    if population == 0:
        return None
    return request_count / population


def block_group_rates(
    buildings: Iterable[BuildingRecord],
    profiles: Dict[str, BlockGroupProfile],
    season: int
) -> List[BlockGroupRate]:
    """Per-capita complaint rates by block group for one season"""
    totals: Dict[str, int] = defaultdict(int)
    for building in buildings:
        totals[building.block_group_id] += building.complaints_in(season)

    rates = []
    for block_group_id in sorted(profiles):
        profile = profiles[block_group_id]
        requests = totals.get(block_group_id, 0)
        rates.append(BlockGroupRate(
            block_group_id=block_group_id,
            requests=requests,
            population=profile.population,
            rate=per_capita_rate(requests, profile.population),
        ))

    undefined = sum(1 for r in rates if r.undefined_rate)
    if undefined:
        logger.warning(f"{undefined} block groups have zero population (undefined_rate)")
    return rates


def write_rates(rates: Iterable[BlockGroupRate], path: str):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["block_group_id", "requests", "population", "rate", "undefined_rate"])
        for r in rates:
            writer.writerow([
                r.block_group_id,
                r.requests,
                r.population,
                "" if r.rate is None else repr(r.rate),
                "true" if r.undefined_rate else "false",
            ])


def training_labels(buildings: Sequence[BuildingRecord], seasons: Iterable[int]) -> np.ndarray:
    """True where a building has a violation in any of the given seasons"""
    seasons = list(seasons)
    return np.array([any(b.violated_in(s) for s in seasons) for b in buildings], dtype=bool)


def write_blockgroups(profiles: Iterable[BlockGroupProfile], path: str):
    """Write profiles in the blockgroups.csv schema; race shares become race_<group> columns"""
    profiles = list(profiles)
    groups = sorted({g for p in profiles for g in p.race_shares})
    features = [f for f in PROFILE_FEATURES if f != "race_diversity"]
    header = ["block_group_id", "population"] + features + [f"{RACE_PREFIX}{g}" for g in groups]
    if not groups:
        header.append("race_diversity")

    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for profile in profiles:
            row = [profile.block_group_id, str(profile.population)]
            row.extend(_format_number(profile.feature(name)) for name in features)
            if groups:
                row.extend(_format_number(profile.race_shares.get(g, 0.0)) for g in groups)
            else:
                row.append(_format_number(profile.race_diversity))
            writer.writerow(row)


def write_events(events: Iterable[Tuple[str, datetime]], path: str):
    """Write (bbl, timestamp) events as complaints.csv / violations.csv"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(EVENT_COLUMNS)
        for bbl, timestamp in events:
            writer.writerow([bbl, timestamp.isoformat(timespec="seconds")])
