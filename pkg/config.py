"""
Configuration - Central run configuration management
"""

import hashlib
import json
import logging
import os
import zlib
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42
DEFAULT_OUTPUT_DIR = "output"

INPUT_FILES = {
    "buildings": "buildings.csv",
    "complaints": "complaints.csv",
    "violations": "violations.csv",
    "blockgroups": "blockgroups.csv",
}


class InputPaths(BaseModel):
    """Input CSV extracts; unset paths default into the synthetic data directory"""
    buildings: Optional[str] = None
    complaints: Optional[str] = None
    violations: Optional[str] = None
    blockgroups: Optional[str] = None


class IngestConfig(BaseModel):
    """
    Column map and categorical policy

    columns maps field names (bbl, x, y, units, ...) to source column names.
    """
    columns: Dict[str, str] = Field(default_factory=dict)
    unknown_policy: Literal["collapse", "reject"] = "collapse"


class SeasonConfig(BaseModel):
    target_season: Optional[int] = None  # latest observed season when unset
    training_seasons: Optional[List[int]] = None  # all seasons before the target when unset
    holdout_fraction: float = 0.2

    @field_validator("holdout_fraction")
    @classmethod
    def _check_holdout(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("holdout_fraction must be in (0, 1)")
        return v


class GBDTConfig(BaseModel):
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 20
    undersample_ratio: float = 1.0
    split_mode: Literal["exact", "histogram"] = "exact"
    n_bins: int = 256
    n_jobs: int = 1

    @field_validator("learning_rate")
    @classmethod
    def _check_lr(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        return v

    @field_validator("n_trees")
    @classmethod
    def _check_trees(cls, v: int) -> int:
        if v < 0:
            raise ValueError("n_trees must be >= 0")
        return v

    @field_validator("max_depth", "min_leaf", "n_jobs")
    @classmethod
    def _check_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("undersample_ratio")
    @classmethod
    def _check_ratio(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("undersample_ratio must be > 0")
        return v

    @field_validator("n_bins")
    @classmethod
    def _check_bins(cls, v: int) -> int:
        if v < 2:
            raise ValueError("n_bins must be >= 2")
        return v


class ThresholdConfig(BaseModel):
    objective: Literal["youden", "f1", "balanced"] = "youden"
    tuning_fraction: float = 0.2  # of the non-evaluation buildings; 0 tunes on the training rows

    @field_validator("tuning_fraction")
    @classmethod
    def _check_tuning(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("tuning_fraction must be in [0, 1)")
        return v


class KDEConfig(BaseModel):
    bandwidth: Optional[float] = None  # Silverman rule when unset
    cell_size: float = 250.0
    hotspot_quantile: float = 0.95
    pad_bandwidths: float = 4.0
    cutoff_bandwidths: Optional[float] = None

    @field_validator("bandwidth")
    @classmethod
    def _check_bandwidth(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v <= 0:
            raise ValueError("bandwidth must be > 0")
        return v

    @field_validator("cell_size")
    @classmethod
    def _check_cell(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("cell_size must be > 0")
        return v

    @field_validator("hotspot_quantile")
    @classmethod
    def _check_quantile(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("hotspot_quantile must be in [0, 1)")
        return v


class CompareConfig(BaseModel):
    test_level: Literal["building", "blockgroup"] = "building"
    equal_var: bool = False


class SynthSection(BaseModel):
    """Synthetic city generation; params are passed to synth_city.SynthConfig"""
    enabled: bool = False
    params: Dict[str, Any] = Field(default_factory=dict)


class RunConfig(BaseModel):
    """
    Main run configuration

    One JSON document with nested sections. Precedence: file < environment < flags.
    """
    seed: int = DEFAULT_SEED
    output_dir: str = DEFAULT_OUTPUT_DIR
    log_level: str = "INFO"
    inputs: InputPaths = Field(default_factory=InputPaths)
    ingest: IngestConfig = Field(default_factory=IngestConfig)
    seasons: SeasonConfig = Field(default_factory=SeasonConfig)
    gbdt: GBDTConfig = Field(default_factory=GBDTConfig)
    threshold: ThresholdConfig = Field(default_factory=ThresholdConfig)
    kde: KDEConfig = Field(default_factory=KDEConfig)
    compare: CompareConfig = Field(default_factory=CompareConfig)
    synth: SynthSection = Field(default_factory=SynthSection)

    @field_validator("log_level")
    @classmethod
    def _check_level(cls, v: str) -> str:
        level = v.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v}")
        return level

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}", code="invalid_config") from e

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        """Load configuration from JSON file"""
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}", code="missing_path") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file is not valid JSON: {path}: {e}", code="invalid_config") from e
        logger.info(f"Loaded config from {path}")
        return cls.from_dict(data)

    def with_env(self) -> "RunConfig":
        """Apply PROPENSITY_* environment overrides (after .env is loaded)"""
        load_dotenv()
        updates: Dict[str, Any] = {}
        if os.environ.get("PROPENSITY_SEED"):
            updates["seed"] = os.environ["PROPENSITY_SEED"]
        if os.environ.get("PROPENSITY_OUTPUT_DIR"):
            updates["output_dir"] = os.environ["PROPENSITY_OUTPUT_DIR"]
        if os.environ.get("PROPENSITY_LOG"):
            updates["log_level"] = os.environ["PROPENSITY_LOG"]
        return self.with_overrides(updates) if updates else self

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """
        Apply overrides given as dotted keys, e.g. {"kde.bandwidth": 400}

        None values are ignored so unset CLI flags never clobber the file.
        """
        data = self.model_dump()
        for key, value in overrides.items():
            if value is None:
                continue
            node = data
            parts = key.split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = value
        return RunConfig.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def save(self, path: str):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, excluding log_level"""
        data = self.to_dict()
        data.pop("log_level", None)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def data_dir(self) -> str:
        return os.path.join(self.output_dir, "data")

    def input_path(self, name: str) -> str:
        """Resolved path of an input CSV; synthetic runs default into data_dir"""
        explicit = getattr(self.inputs, name)
        if explicit:
            return explicit
        if self.synth.enabled:
            return os.path.join(self.data_dir, INPUT_FILES[name])
        raise ConfigError(f"No path configured for input '{name}'", code="missing_path")

    def require_inputs(self, names: List[str]):
        """Fail fast when a referenced input is not resolvable"""
        for name in names:
            path = self.input_path(name)
            if not os.path.exists(path):
                raise ConfigError(f"Input '{name}' not found: {path}", code="missing_path")


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for a named sub-stream of the top-level seed"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(stream.encode("utf-8"))]))
