"""
Pipeline - Stage runners and the run manifest

Stages hand off through files in the output directory only:
synth -> train -> classify -> rates -> hotspot -> compare.
Every CSV gets a <file>.meta.json sidecar with the config hash, seed and
stage; JSON outputs embed the same keys.
"""

import hashlib
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from importlib import metadata
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from building_classifier import (
    ReportingDirection,
    classify_buildings,
    read_classified,
    summarize,
    write_classified,
    write_summary,
)
from config import RunConfig
from data_loader import (
    AttachReport,
    LoadReport,
    attach_events,
    block_group_rates,
    load_blockgroups,
    load_buildings,
    load_events,
    write_rates,
    write_rejections,
)
from density import hotspots, silverman_bandwidth, surface_for_points, write_hotspots_geojson, write_surface_csv
from enhanced_logging import run_context
from errors import DataValidationError
from evaluation import evaluate, metrics_report, tune_threshold, write_metrics
from features import FeatureEncoder
from gbdt import BoostParams, feature_importance, fit, load_model, save_model, train_validation_split, undersample_majority
from hypothesis_tests import compare_groups, write_ttests
from models import BlockGroupProfile, BuildingRecord
from performance_monitor import PerformanceMonitor
from synth_city import SynthConfig, generate

logger = logging.getLogger(__name__)

PIPELINE_VERSION = "1.0.0"
STAGES = ["synth", "train", "classify", "rates", "hotspot", "compare"]

OUTPUT_FILES = {
    "model": "model.json",
    "metrics": "metrics.json",
    "classified": "classified.csv",
    "summary": "summary.json",
    "rates": "rates.csv",
    "hotspots": "hotspots.geojson",
    "ttests": "ttests.csv",
    "comparison": "comparison.json",
    "manifest": "manifest.json",
    "config": "config.json",
}

TRACKED_PACKAGES = ["numpy", "pandas", "scipy", "shapely", "pydantic", "python-dotenv"]


@dataclass
class Dataset:
    """Loaded inputs with events windowed into seasons"""
    buildings: List[BuildingRecord]
    profiles: Dict[str, BlockGroupProfile]
    attach: AttachReport
    reports: Dict[str, LoadReport] = field(default_factory=dict)


def output_path(config: RunConfig, name: str) -> str:
    return os.path.join(config.output_dir, OUTPUT_FILES.get(name, name))


def stage_meta(config: RunConfig, stage: str) -> Dict[str, Any]:
    return {"config_hash": config.config_hash(), "seed": config.seed, "stage": stage}


def write_sidecar(path: str, config: RunConfig, stage: str):
    with open(f"{path}.meta.json", "w") as f:
        json.dump(stage_meta(config, stage), f, indent=2, sort_keys=True)


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _prepare_output(config: RunConfig):
    os.makedirs(config.output_dir, exist_ok=True)


def load_dataset(config: RunConfig, stage: str, with_events: bool = True) -> Dataset:
    """Load and validate inputs; rejection reports are written next to the outputs"""
    names = ["buildings", "blockgroups"] + (["complaints", "violations"] if with_events else [])
    config.require_inputs(names)
    columns = config.ingest.columns or None

    buildings, building_report = load_buildings(config.input_path("buildings"), columns, config.ingest.unknown_policy)
    profiles, profile_report = load_blockgroups(config.input_path("blockgroups"), columns)
    reports = {"buildings": building_report, "blockgroups": profile_report}

    attach = AttachReport()
    if with_events:
        complaints, complaint_report = load_events(config.input_path("complaints"), columns)
        violations, violation_report = load_events(config.input_path("violations"), columns)
        reports.update({"complaints": complaint_report, "violations": violation_report})
        buildings, attach = attach_events(buildings, complaints, violations)

    if not buildings:
        raise DataValidationError("No valid buildings loaded", code="empty_input")

    unresolved = sorted({b.block_group_id for b in buildings if b.block_group_id not in profiles})
    if unresolved:
        logger.warning(f"{len(unresolved)} building block groups have no profile "
                       f"(e.g. {unresolved[:3]}); they are excluded from comparisons")

    _prepare_output(config)
    for name, report in reports.items():
        if report.rejects:
            path = os.path.join(config.output_dir, f"rejections_{name}.csv")
            write_rejections(report.rejects, path)
            write_sidecar(path, config, stage)
    return Dataset(buildings=buildings, profiles=profiles, attach=attach, reports=reports)


def target_season(config: RunConfig, buildings: Sequence[BuildingRecord]) -> int:
    if config.seasons.target_season is not None:
        return config.seasons.target_season
    observed = sorted({s for b in buildings for s in b.seasons})
    if not observed:
        raise DataValidationError("No heating-season events found", code="empty_input")
    return observed[-1]


def cmd_synth(config: RunConfig) -> Dict[str, str]:
    """Generate the synthetic city into <output_dir>/data"""
    synth_config = SynthConfig.from_dict(config.synth.params, seed=config.seed)
    city = generate(synth_config, config.data_dir)
    paths = {}
    for name in ("buildings", "complaints", "violations", "blockgroups"):
        path = os.path.join(config.data_dir, f"{name}.csv")
        write_sidecar(path, config, "synth")
        paths[name] = path
    paths["truth"] = os.path.join(config.data_dir, "truth.json")
    logger.info(f"Synthetic data in {config.data_dir} "
                f"(realized violation rate {city.truth['realized_violation_rate']:.4f})")
    return paths


def cmd_train(config: RunConfig) -> Dict[str, str]:
    """Fit the violation model, tune its threshold and write model.json + metrics.json"""
    data = load_dataset(config, "train")
    split = train_validation_split(
        data.buildings,
        target_season=config.seasons.target_season,
        training_seasons=config.seasons.training_seasons,
        holdout_fraction=config.seasons.holdout_fraction,
        seed=config.seed,
        tuning_fraction=config.threshold.tuning_fraction,
    )
    train_records = [data.buildings[i] for i in split.train_index]
    eval_records = [data.buildings[i] for i in split.eval_index]
    encoder = FeatureEncoder.fit(train_records)
    X_train = encoder.transform(train_records)
    X_eval = encoder.transform(eval_records)

    params = BoostParams.from_config(config.gbdt, config.seed)
    model = fit(X_train, split.train_labels, params, encoder.feature_names, encoder.categorical_mask)
    model.encoder = encoder.to_dict()
    model.training_meta.update(stage_meta(config, "train"))
    model.training_meta.update({
        "training_seasons": split.training_seasons,
        "target_season": split.target_season,
    })

    tune_labels = split.tune_labels
    if 0 < int(tune_labels.sum()) < tune_labels.size:
        X_tune = encoder.transform([data.buildings[i] for i in split.tune_index])
        threshold_rows = "tuning"
    else:
        if tune_labels.size:
            logger.warning(f"Tuning slice of {tune_labels.size} buildings is single-class; tuning on training rows")
        X_tune, tune_labels = X_train, split.train_labels
        threshold_rows = "training"
    model.threshold = tune_threshold(model, X_tune, tune_labels, config.threshold.objective)
    model.training_meta["threshold_rows"] = threshold_rows
    natural = evaluate(model, X_eval, split.eval_labels, model.threshold)

    balanced = None
    if 0 < int(split.eval_labels.sum()) < split.eval_labels.size:
        index = np.asarray(undersample_majority(split.eval_labels, 1.0, config.seed))
        balanced = evaluate(model, X_eval[index], split.eval_labels[index], model.threshold)
    else:
        logger.warning(f"Season {split.target_season} held-out labels are single-class; no balanced evaluation")

    importances = feature_importance(model)
    report = metrics_report(natural, balanced, model, importances, extra={
        **stage_meta(config, "train"),
        "threshold_objective": config.threshold.objective,
        "target_season": split.target_season,
        "training_seasons": split.training_seasons,
        "n_train": int(split.train_index.size),
        "n_eval": int(split.eval_index.size),
        "n_tune": int(split.tune_index.size),
        "threshold_rows": threshold_rows,
    })

    _prepare_output(config)
    model_path = output_path(config, "model")
    metrics_path = output_path(config, "metrics")
    save_model(model, model_path)
    write_metrics(report, metrics_path)

    headline = balanced.metrics["accuracy"] if balanced is not None else natural.metrics["accuracy"]
    logger.info(f"Held-out accuracy {natural.metrics['accuracy']:.3f} (natural), "
                f"{headline:.3f} (balanced); threshold {model.threshold:.4f}")
    return {"model": model_path, "metrics": metrics_path}


def cmd_classify(config: RunConfig, model_path: Optional[str] = None) -> Dict[str, str]:
    """Score every building and cross predictions with target-season complaints"""
    model = load_model(model_path or output_path(config, "model"))
    if model.threshold is None or model.encoder is None:
        raise DataValidationError("Model has no tuned threshold or feature encoder", code="invalid_model")

    data = load_dataset(config, "classify")
    season = target_season(config, data.buildings)
    encoder = FeatureEncoder.from_dict(model.encoder)
    probabilities = model.predict_proba(encoder.transform(data.buildings))

    classified = classify_buildings(
        [b.bbl for b in data.buildings],
        [b.block_group_id for b in data.buildings],
        [(b.x, b.y) for b in data.buildings],
        probabilities,
        [b.complaints_in(season) for b in data.buildings],
        model.threshold,
    )
    summary = summarize(classified, season=season, threshold=model.threshold)

    classified_path = output_path(config, "classified")
    summary_path = output_path(config, "summary")
    write_classified(classified, classified_path)
    write_sidecar(classified_path, config, "classify")
    write_summary(summary, summary_path, extra=stage_meta(config, "classify"))

    shares = ", ".join(f"{t.value} {summary.shares[t]:.3f}" for t in summary.shares)
    logger.info(f"Classified {summary.total} buildings for season {season}: {shares}")
    return {"classified": classified_path, "summary": summary_path}


def cmd_rates(config: RunConfig) -> Dict[str, str]:
    """Per-capita complaint rates by block group for the target season"""
    data = load_dataset(config, "rates")
    season = target_season(config, data.buildings)
    rates = block_group_rates(data.buildings, data.profiles, season)
    path = output_path(config, "rates")
    write_rates(rates, path)
    write_sidecar(path, config, "rates")
    return {"rates": path}


def cmd_hotspot(config: RunConfig, classified_path: Optional[str] = None) -> Dict[str, str]:
    """KDE surface and hotspot polygons for under- and over-reporting buildings"""
    classified = read_classified(classified_path or output_path(config, "classified"))
    sets = {}
    paths = {}
    for direction in ReportingDirection:
        points = [(b.x, b.y) for b in classified if b.direction is direction]
        if not points:
            logger.warning(f"No {direction.value} buildings; skipping its surface")
            continue
        bandwidth = config.kde.bandwidth or silverman_bandwidth(points)
        surface = surface_for_points(points, bandwidth, config.kde.cell_size,
                                     pad_bandwidths=config.kde.pad_bandwidths,
                                     cutoff_bandwidths=config.kde.cutoff_bandwidths)
        sets[direction.value] = hotspots(surface, config.kde.hotspot_quantile)

        surface_path = os.path.join(config.output_dir, f"surface_{direction.value}.csv")
        write_surface_csv(surface, surface_path)
        write_sidecar(surface_path, config, "hotspot")
        paths[f"surface_{direction.value}"] = surface_path

    geojson_path = output_path(config, "hotspots")
    write_hotspots_geojson(sets, geojson_path, extra=stage_meta(config, "hotspot"))
    paths["hotspots"] = geojson_path
    return paths


def cmd_compare(config: RunConfig, classified_path: Optional[str] = None) -> Dict[str, str]:
    """Welch (or pooled) t-tests of block-group features, under- vs over-reporting"""
    classified = read_classified(classified_path or output_path(config, "classified"))
    config.require_inputs(["blockgroups"])
    profiles, report = load_blockgroups(config.input_path("blockgroups"), config.ingest.columns or None)
    comparison = compare_groups(classified, profiles, level=config.compare.test_level,
                                equal_var=config.compare.equal_var)

    ttests_path = output_path(config, "ttests")
    write_ttests(comparison.results, ttests_path)
    write_sidecar(ttests_path, config, "compare")

    comparison_path = output_path(config, "comparison")
    with open(comparison_path, "w") as f:
        json.dump({
            **stage_meta(config, "compare"),
            "level": comparison.level,
            "equal_var": config.compare.equal_var,
            "n_under": comparison.n_under,
            "n_over": comparison.n_over,
            "unresolved": comparison.unresolved,
            "unresolved_block_groups": comparison.unresolved_block_groups,
        }, f, indent=2, sort_keys=True)

    for result in comparison.results:
        logger.info(f"  {result.feature:22s} t={result.t_value:8.3f} p={result.p_value:.3g}")
    return {"ttests": ttests_path, "comparison": comparison_path}


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version(), "pipeline": PIPELINE_VERSION}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def cmd_pipeline(config: RunConfig) -> Dict[str, Any]:
    """
    Run every stage in order and write manifest.json

    The synth stage runs when synth.enabled is set; otherwise inputs must be
    configured explicitly.
    """
    _prepare_output(config)
    config.save(output_path(config, "config"))
    monitor = PerformanceMonitor()
    outputs: Dict[str, str] = {}

    runners = [
        ("synth", cmd_synth),
        ("train", cmd_train),
        ("classify", cmd_classify),
        ("rates", cmd_rates),
        ("hotspot", cmd_hotspot),
        ("compare", cmd_compare),
    ]
    for name, runner in runners:
        if name == "synth" and not config.synth.enabled:
            logger.info("Synthetic generation disabled; using configured inputs")
            continue
        with run_context(config_hash=config.config_hash(), seed=config.seed, stage=name), monitor.stage(name):
            outputs.update(runner(config))

    input_names = ["buildings", "complaints", "violations", "blockgroups"]
    manifest = {
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime()),
        "versions": package_versions(),
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "inputs": {
            name: {"path": config.input_path(name), "sha256": file_sha256(config.input_path(name))}
            for name in input_names
        },
        "outputs": {name: file_sha256(path) for name, path in sorted(outputs.items())},
        "stages": [s.stage for s in monitor.stages],
        "timing": monitor.to_dict(),
    }
    manifest_path = output_path(config, "manifest")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Pipeline finished: {len(monitor.stages)} stages in {monitor.total_seconds():.1f}s; "
                f"manifest at {manifest_path}")
    return manifest
