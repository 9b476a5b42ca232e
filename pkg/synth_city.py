"""
Synthetic City - Buildings, census block groups and seasonal events with known ground truth

Violation risk follows a logistic model on building attributes; reporting
propensity follows a logistic model on block-group demographics. Every
latent parameter and realized rate is written to truth.json so the pipeline
can be checked against what was injected.
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config import rng_for
from data_loader import write_blockgroups, write_buildings, write_events
from errors import ConfigError, NumericalError
from models import (
    PROFILE_FEATURES,
    BasementCode,
    BlockGroupProfile,
    BoilerType,
    BuildingRecord,
    FeatureVector,
    HeatingSeason,
    OwnershipType,
    ProximityCode,
)

logger = logging.getLogger(__name__)

DEFAULT_RISK_WEIGHTS = {
    "building_age": 1.1,
    "boiler_age": 1.0,
    "value_per_sqft": -0.8,
    "has_super": -0.5,
    "boiler_type:oil": 0.4,
    "ownership_type:individual": 0.4,
    "proximity_code:attached": 0.3,
    "area_per_unit": -0.3,
}

# limited-English, unemployed and minority neighborhoods under-report;
# affluent, older, educated ones over-report
REFERENCE_PROPENSITY_WEIGHTS = {
    "pct_limited_english": -0.6,
    "unemployment_rate": -0.3,
    "pct_minority": -0.3,
    "median_income": 0.4,
    "pct_over70": 0.3,
    "pct_bachelor_plus": 0.3,
}

RISK_NUMERIC = ["building_age", "boiler_age", "value_per_sqft", "area_per_unit", "units",
                "residential_ratio", "width", "depth"]
RISK_INDICATORS = {
    "has_super": None,
    "boiler_type": BoilerType,
    "ownership_type": OwnershipType,
    "proximity_code": ProximityCode,
    "basement_code": BasementCode,
}

RACE_GROUPS = ["white", "black", "hispanic", "asian", "other"]

# Factor loadings of each demographic on the shared neighborhood factor
FACTOR_LOADINGS = {
    "median_rent": -0.6,
    "vacancy_rate": 0.4,
    "median_income": -0.9,
    "pct_limited_english": 0.9,
    "pct_married": -0.4,
    "unemployment_rate": 0.8,
    "pct_over70": -0.3,
    "pct_bachelor_plus": -0.8,
    "pct_female": 0.1,
    "pct_living_alone": -0.2,
}

PROPORTION_MEANS = {
    "vacancy_rate": 0.07,
    "pct_limited_english": 0.10,
    "pct_married": 0.40,
    "unemployment_rate": 0.08,
    "pct_over70": 0.09,
    "pct_bachelor_plus": 0.30,
    "pct_female": 0.52,
    "pct_living_alone": 0.30,
}

BISECTION_BRACKET = (-30.0, 30.0)
BISECTION_STEPS = 100
SECONDS_PER_DAY = 86400


@dataclass
class SynthConfig:
    n_buildings: int = 20000
    n_block_groups: int = 200
    seed: int = 42
    violation_base_rate: float = 0.0514
    risk_weights: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RISK_WEIGHTS))
    propensity_weights: Dict[str, float] = field(default_factory=dict)
    propensity_intercept: float = 0.0
    noise_sd: float = 0.5
    false_complaint_rate: float = 0.02
    false_complaint_coupling: float = 1.0
    n_seasons: int = 4
    first_season: int = 2013
    correlation_strength: float = 0.7
    offseason_rate: float = 0.01
    city_size: float = 20000.0
    building_spread: float = 400.0
    boiler_age_missing_rate: float = 0.05

    def __post_init__(self):
        if self.n_buildings < 1 or self.n_block_groups < 1:
            raise ConfigError("n_buildings and n_block_groups must be positive")
        if not 0.0 < self.violation_base_rate < 1.0:
            raise ConfigError("violation_base_rate must be in (0, 1)")
        if not 0.0 < self.false_complaint_rate < 1.0:
            raise ConfigError("false_complaint_rate must be in (0, 1)")
        if self.false_complaint_coupling < 0:
            raise ConfigError("false_complaint_coupling must be >= 0")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        if self.n_seasons < 1:
            raise ConfigError("n_seasons must be >= 1")
        if not 0.0 <= self.correlation_strength <= 1.0:
            raise ConfigError("correlation_strength must be in [0, 1]")
        if not 0.0 <= self.offseason_rate < 1.0:
            raise ConfigError("offseason_rate must be in [0, 1)")
        unknown = [k for k in self.propensity_weights if k not in PROFILE_FEATURES]
        if unknown:
            raise ConfigError(f"Unknown propensity feature(s) {unknown}")
        known_risk = set(_risk_feature_names())
        unknown = [k for k in self.risk_weights if k not in known_risk]
        if unknown:
            raise ConfigError(f"Unknown risk feature(s) {unknown}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], seed: Optional[int] = None) -> "SynthConfig":
        params = dict(data)
        if seed is not None and "seed" not in params:
            params["seed"] = seed
        try:
            return cls(**params)
        except TypeError as e:
            raise ConfigError(f"Invalid synthetic city parameters: {e}") from e

    @classmethod
    def reference_city(cls, **overrides) -> "SynthConfig":
        params: Dict[str, Any] = {"propensity_weights": dict(REFERENCE_PROPENSITY_WEIGHTS)}
        params.update(overrides)
        return cls(**params)

    @property
    def seasons(self) -> List[int]:
        return [self.first_season + k for k in range(self.n_seasons)]


@dataclass
class SynthCity:
    """Generated city plus the per-building latent quantities behind it"""
    config: SynthConfig
    buildings: List[BuildingRecord]
    profiles: List[BlockGroupProfile]
    complaints: List[Tuple[str, datetime]]
    violations: List[Tuple[str, datetime]]
    latent_probability: np.ndarray
    propensity: np.ndarray  # per building, from its block group
    violated: np.ndarray  # seasons x buildings
    complained: np.ndarray  # seasons x buildings
    truth: Dict[str, Any]


def _risk_feature_names() -> List[str]:
    names = list(RISK_NUMERIC)
    for name, enum_type in RISK_INDICATORS.items():
        if enum_type is None:
            names.append(name)
        else:
            names.extend(f"{name}:{level.value}" for level in enum_type)
    return names


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _standardize(values: np.ndarray) -> np.ndarray:
    sd = float(values.std())
    if sd == 0.0:
        return np.zeros_like(values)
    return (values - values.mean()) / sd


def calibrate_intercept(scores: np.ndarray, target_rate: float) -> float:
    """Intercept c with mean(sigmoid(c + scores)) = target_rate, by bisection"""
    lo, hi = BISECTION_BRACKET

    def excess(c: float) -> float:
        return float(np.mean(_sigmoid(c + scores))) - target_rate

    if excess(lo) > 0 or excess(hi) < 0:
        raise NumericalError(
            f"Cannot calibrate rate {target_rate} within intercept bracket {BISECTION_BRACKET}",
            code="calibration_failed"
        )
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _neighborhood_factor(centroids: np.ndarray, city_size: float, rng: np.random.Generator) -> np.ndarray:
    """Spatially smooth standardized factor from a few Gaussian bumps"""
    n_bumps = 4
    centers = rng.uniform(0.0, city_size, size=(n_bumps, 2))
    signs = rng.choice([-1.0, 1.0], size=n_bumps)
    scale = city_size / 4.0
    d2 = ((centroids[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    field_values = (signs[None, :] * np.exp(-d2 / (2.0 * scale * scale))).sum(axis=1)
    return _standardize(field_values)


def _block_groups(config: SynthConfig, rng: np.random.Generator) -> Tuple[List[BlockGroupProfile], np.ndarray]:
    n = config.n_block_groups
    centroids = rng.uniform(0.0, config.city_size, size=(n, 2))
    factor = _neighborhood_factor(centroids, config.city_size, rng)
    rho = config.correlation_strength
    residual = math.sqrt(1.0 - rho * rho)

    def component(name: str) -> np.ndarray:
        return FACTOR_LOADINGS[name] * rho * factor + residual * rng.normal(0.0, 1.0, size=n)

    values: Dict[str, np.ndarray] = {}
    values["median_income"] = 55000.0 * np.exp(0.4 * component("median_income"))
    values["median_rent"] = 1300.0 * np.exp(0.25 * component("median_rent"))
    for name, mean in PROPORTION_MEANS.items():
        values[name] = _sigmoid(_logit(mean) + 0.5 * component(name))

    alpha_scale = np.stack([
        2.0 * np.exp(-0.8 * rho * factor),
        1.0 * np.exp(0.5 * rho * factor),
        1.0 * np.exp(0.6 * rho * factor),
        0.7 * np.ones(n),
        0.3 * np.ones(n),
    ], axis=1)
    shares = np.stack([rng.dirichlet(alpha_scale[i] * 4.0) for i in range(n)])
    shares = shares / shares.sum(axis=1, keepdims=True)

    population = rng.integers(300, 3000, size=n)
    profiles = []
    for i in range(n):
        race_shares = {g: float(shares[i, k]) for k, g in enumerate(RACE_GROUPS)}
        profiles.append(BlockGroupProfile(
            block_group_id=f"36061{i:07d}",
            population=int(population[i]),
            median_rent=float(values["median_rent"][i]),
            race_diversity=float(1.0 - np.sum(shares[i] ** 2)),
            vacancy_rate=float(values["vacancy_rate"][i]),
            pct_minority=float(race_shares["black"] + race_shares["hispanic"] + race_shares["other"]),
            median_income=float(values["median_income"][i]),
            pct_limited_english=float(values["pct_limited_english"][i]),
            pct_married=float(values["pct_married"][i]),
            unemployment_rate=float(values["unemployment_rate"][i]),
            pct_over70=float(values["pct_over70"][i]),
            pct_white=race_shares["white"],
            pct_bachelor_plus=float(values["pct_bachelor_plus"][i]),
            pct_female=float(values["pct_female"][i]),
            pct_living_alone=float(values["pct_living_alone"][i]),
            race_shares=race_shares,
        ))
    return profiles, centroids


def _choice(rng: np.random.Generator, levels: List[Any], probs: List[float], size: int) -> np.ndarray:
    return rng.choice(len(levels), size=size, p=probs)


def _buildings(
    config: SynthConfig,
    profiles: List[BlockGroupProfile],
    centroids: np.ndarray,
    rng: np.random.Generator
) -> Tuple[List[BuildingRecord], Dict[str, np.ndarray], np.ndarray]:
    n = config.n_buildings
    bg_index = rng.integers(0, len(profiles), size=n)
    xy = centroids[bg_index] + rng.normal(0.0, config.building_spread, size=(n, 2))
    xy = np.clip(xy, 0.0, config.city_size)

    # attributes are independent of block-group demographics; only location depends on the block group
    building_age = np.clip(np.round(rng.normal(70.0, 25.0, size=n)), 1.0, 150.0)
    boiler_age = np.clip(np.round(0.35 * building_age + rng.normal(0.0, 8.0, size=n)), 0.0, None)
    boiler_age = np.minimum(boiler_age, building_age)
    boiler_missing = rng.random(n) < config.boiler_age_missing_rate
    units = np.maximum(3, np.round(np.exp(rng.normal(3.0, 0.8, size=n)))).astype(int)
    area_per_unit = np.exp(rng.normal(math.log(900.0), 0.3, size=n))
    residential_ratio = rng.beta(8.0, 1.5, size=n)
    width = np.exp(rng.normal(math.log(40.0), 0.4, size=n))
    depth = np.exp(rng.normal(math.log(90.0), 0.3, size=n))
    value_per_sqft = np.exp(rng.normal(math.log(150.0), 0.5, size=n))
    has_super = rng.random(n) < _sigmoid(np.log(units) - 3.0)

    basement_levels = [BasementCode.FULL_OR_PARTIAL, BasementCode.NONE, BasementCode.UNKNOWN]
    basement = _choice(rng, basement_levels, [0.7, 0.2, 0.1], n)
    proximity_levels = [ProximityCode.DETACHED, ProximityCode.SEMI_ATTACHED, ProximityCode.ATTACHED, ProximityCode.UNKNOWN]
    proximity = _choice(rng, proximity_levels, [0.1, 0.25, 0.6, 0.05], n)
    ownership_levels = [OwnershipType.INDIVIDUAL, OwnershipType.CORP, OwnershipType.COMPANY, OwnershipType.OTHER]
    ownership = _choice(rng, ownership_levels, [0.3, 0.35, 0.3, 0.05], n)
    boiler_levels = [BoilerType.GAS, BoilerType.OIL, BoilerType.ELECTRICITY, BoilerType.OTHER, BoilerType.UNKNOWN]
    boiler = _choice(rng, boiler_levels, [0.55, 0.3, 0.05, 0.05, 0.05], n)

    records = []
    for i in range(n):
        features = FeatureVector(
            value_per_sqft=float(value_per_sqft[i]),
            units=int(units[i]),
            area_per_unit=float(area_per_unit[i]),
            residential_ratio=float(residential_ratio[i]),
            width=float(width[i]),
            depth=float(depth[i]),
            building_age=float(building_age[i]),
            basement_code=basement_levels[basement[i]],
            proximity_code=proximity_levels[proximity[i]],
            ownership_type=ownership_levels[ownership[i]],
            has_super=bool(has_super[i]),
            boiler_type=boiler_levels[boiler[i]],
            boiler_age=None if boiler_missing[i] else float(boiler_age[i]),
        )
        records.append(BuildingRecord(
            bbl=f"{1 + i % 5}{i // 5 + 1:09d}",
            block_group_id=profiles[bg_index[i]].block_group_id,
            x=float(xy[i, 0]),
            y=float(xy[i, 1]),
            features=features,
        ))

    observed_boiler_age = np.where(boiler_missing, np.nan, boiler_age)
    raw: Dict[str, np.ndarray] = {
        "building_age": building_age,
        "boiler_age": np.where(np.isnan(observed_boiler_age), np.nanmean(observed_boiler_age), observed_boiler_age),
        "value_per_sqft": value_per_sqft,
        "area_per_unit": area_per_unit,
        "units": units.astype(float),
        "residential_ratio": residential_ratio,
        "width": width,
        "depth": depth,
        "has_super": has_super.astype(float),
    }
    for name, levels, codes in (
        ("boiler_type", boiler_levels, boiler),
        ("ownership_type", ownership_levels, ownership),
        ("proximity_code", proximity_levels, proximity),
        ("basement_code", basement_levels, basement),
    ):
        for k, level in enumerate(levels):
            raw[f"{name}:{level.value}"] = (codes == k).astype(float)
    return records, raw, bg_index


def _event_times(
    season: int,
    counts: np.ndarray,
    offseason_rate: float,
    rng: np.random.Generator
) -> List[datetime]:
    """Uniform timestamps inside the heating season; a share lands in the following summer"""
    heating = HeatingSeason(season)
    span = int((heating.end - heating.start).total_seconds())
    summer_start = heating.end
    summer_span = int((datetime(season + 1, 10, 1) - summer_start).total_seconds())
    total = int(counts.sum())
    offseason = rng.random(total) < offseason_rate
    in_season = rng.integers(0, span, size=total)
    off = rng.integers(0, summer_span, size=total)
    return [
        (summer_start + timedelta(seconds=int(off[k]))) if offseason[k]
        else (heating.start + timedelta(seconds=int(in_season[k])))
        for k in range(total)
    ]


def generate(config: SynthConfig, out_dir: Optional[str] = None) -> SynthCity:
    """
    Generate a city; with out_dir, also write buildings.csv, complaints.csv,
    violations.csv, blockgroups.csv and truth.json there
    """
    rng = rng_for(config.seed, "synth")
    profiles, centroids = _block_groups(config, rng)
    buildings, raw, bg_index = _buildings(config, profiles, centroids, rng)
    n = config.n_buildings

    risk_score = np.zeros(n, dtype=float)
    for name, weight in sorted(config.risk_weights.items()):
        risk_score += weight * _standardize(raw[name])
    if config.noise_sd > 0:
        risk_score += rng.normal(0.0, config.noise_sd, size=n)
    intercept = calibrate_intercept(risk_score, config.violation_base_rate)
    latent = _sigmoid(intercept + risk_score)

    demographic_z = {
        name: _standardize(np.array([p.feature(name) for p in profiles]))
        for name in config.propensity_weights
    }
    demo_score_bg = np.zeros(len(profiles), dtype=float)
    for name, weight in sorted(config.propensity_weights.items()):
        demo_score_bg += weight * demographic_z[name]
    propensity_bg = _sigmoid(config.propensity_intercept + demo_score_bg)
    propensity = propensity_bg[bg_index]
    # false complaints shift with the same demographics, scaled by the coupling;
    # the intercept keeps the city-wide rate at false_complaint_rate
    spurious_score = config.false_complaint_coupling * demo_score_bg
    spurious_intercept = calibrate_intercept(spurious_score[bg_index], config.false_complaint_rate)
    spurious_bg = _sigmoid(spurious_intercept + spurious_score)
    spurious = spurious_bg[bg_index]

    seasons = config.seasons
    violated = np.zeros((len(seasons), n), dtype=bool)
    complained = np.zeros((len(seasons), n), dtype=bool)
    complaints: List[Tuple[str, datetime]] = []
    violations: List[Tuple[str, datetime]] = []
    bbls = np.array([b.bbl for b in buildings])
    season_stats = []

    for k, season in enumerate(seasons):
        violated[k] = rng.random(n) < latent
        draw = rng.random(n)
        reported = violated[k] & (draw < propensity)
        false_alarm = ~violated[k] & (draw < spurious)
        complained[k] = reported | false_alarm

        violation_counts = np.where(violated[k], 1 + rng.poisson(0.5, size=n), 0)
        complaint_counts = np.where(reported, 1 + rng.poisson(1.5, size=n), 0)
        complaint_counts = np.where(false_alarm, 1 + rng.poisson(0.5, size=n), complaint_counts)

        violation_bbls = np.repeat(bbls, violation_counts)
        violations.extend(zip(violation_bbls.tolist(),
                              _event_times(season, violation_counts, config.offseason_rate, rng)))
        complaint_bbls = np.repeat(bbls, complaint_counts)
        complaints.extend(zip(complaint_bbls.tolist(),
                              _event_times(season, complaint_counts, config.offseason_rate, rng)))

        n_violated = int(violated[k].sum())
        season_stats.append({
            "season": season,
            "violation_rate": n_violated / n,
            "complaint_rate": float(complained[k].mean()),
            "complaint_given_violation": float(reported.sum() / n_violated) if n_violated else None,
            "complaint_given_no_violation": float(false_alarm.sum() / (n - n_violated)) if n_violated < n else None,
        })

    truth = {
        "config": asdict(config),
        "risk_intercept": intercept,
        "expected_violation_rate": float(latent.mean()),
        "realized_violation_rate": float(violated.mean()),
        "seasons": season_stats,
        "false_complaint_intercept": spurious_intercept,
        "false_complaint_rate_by_block_group": {
            p.block_group_id: float(spurious_bg[i]) for i, p in enumerate(profiles)
        },
        "propensity_by_block_group": {
            p.block_group_id: float(propensity_bg[i]) for i, p in enumerate(profiles)
        },
        "n_complaints": len(complaints),
        "n_violations": len(violations),
    }
    logger.info(f"Generated synthetic city: {n} buildings in {len(profiles)} block groups, "
                f"{len(seasons)} seasons, realized violation rate {truth['realized_violation_rate']:.4f}")

    city = SynthCity(
        config=config,
        buildings=buildings,
        profiles=profiles,
        complaints=complaints,
        violations=violations,
        latent_probability=latent,
        propensity=propensity,
        violated=violated,
        complained=complained,
        truth=truth,
    )
    if out_dir is not None:
        write_city(city, out_dir)
    return city


def write_city(city: SynthCity, out_dir: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "buildings": os.path.join(out_dir, "buildings.csv"),
        "complaints": os.path.join(out_dir, "complaints.csv"),
        "violations": os.path.join(out_dir, "violations.csv"),
        "blockgroups": os.path.join(out_dir, "blockgroups.csv"),
        "truth": os.path.join(out_dir, "truth.json"),
    }
    write_buildings(city.buildings, paths["buildings"])
    write_events(city.complaints, paths["complaints"])
    write_events(city.violations, paths["violations"])
    write_blockgroups(city.profiles, paths["blockgroups"])
    with open(paths["truth"], "w") as f:
        json.dump(city.truth, f, indent=2, sort_keys=True)
    logger.info(f"Wrote synthetic city to {out_dir}")
    return paths
