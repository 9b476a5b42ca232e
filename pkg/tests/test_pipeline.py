"""End-to-end tests for the stage runners and the command line"""

import csv
import json
import os

import pytest

import pipeline
from main import build_parser, load_config, main
from performance_monitor import PerformanceMonitor
from tests.conftest import small_run_config


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run") / "out")
    config = small_run_config(out)
    manifest = pipeline.cmd_pipeline(config)
    return config, manifest


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


class TestPipeline:
    def test_artifacts_exist(self, finished_run):
        config, _ = finished_run
        for name in ("model", "metrics", "classified", "summary", "rates", "hotspots", "ttests",
                     "comparison", "manifest", "config"):
            assert os.path.exists(pipeline.output_path(config, name)), name
        for name in ("buildings", "complaints", "violations", "blockgroups"):
            assert os.path.exists(os.path.join(config.data_dir, f"{name}.csv"))

    def test_manifest(self, finished_run):
        config, manifest = finished_run
        assert manifest["stages"] == pipeline.STAGES
        assert manifest["config_hash"] == config.config_hash()
        assert set(manifest["inputs"]) == {"buildings", "complaints", "violations", "blockgroups"}
        assert manifest["outputs"]["classified"] == pipeline.file_sha256(pipeline.output_path(config, "classified"))
        assert all(stage["ok"] for stage in manifest["timing"]["stages"])
        assert manifest["versions"]["pipeline"] == pipeline.PIPELINE_VERSION

    def test_sidecars(self, finished_run):
        config, _ = finished_run
        for name in ("classified", "rates", "ttests"):
            with open(pipeline.output_path(config, name) + ".meta.json") as f:
                meta = json.load(f)
            assert meta["config_hash"] == config.config_hash()
            assert meta["seed"] == config.seed
        with open(pipeline.output_path(config, "metrics")) as f:
            metrics = json.load(f)
        assert metrics["stage"] == "train"
        assert metrics["config_hash"] == config.config_hash()
        assert metrics["n_tune"] > 0
        assert metrics["threshold_rows"] in ("tuning", "training")

    def test_classified_rows_cover_every_building(self, finished_run):
        config, _ = finished_run
        with open(pipeline.output_path(config, "classified")) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2500
        assert {r["type"] for r in rows} <= {"Type1", "Type2", "Type3", "Type4"}
        with open(pipeline.output_path(config, "summary")) as f:
            summary = json.load(f)
        assert summary["total"] == 2500
        assert sum(summary["shares"].values()) == pytest.approx(1.0)

    def test_rerun_is_byte_identical(self, finished_run):
        config, _ = finished_run
        names = ("classified", "ttests", "model", "rates", "hotspots")
        before = {name: read_bytes(pipeline.output_path(config, name)) for name in names}
        pipeline.cmd_pipeline(config)
        for name in names:
            assert read_bytes(pipeline.output_path(config, name)) == before[name], name

    def test_stages_run_individually(self, finished_run, tmp_path):
        config, _ = finished_run
        classified = pipeline.output_path(config, "classified")
        separate = config.with_overrides({"output_dir": str(tmp_path), "inputs.blockgroups":
                                          os.path.join(config.data_dir, "blockgroups.csv")})
        outputs = pipeline.cmd_compare(separate, classified_path=classified)
        assert os.path.exists(outputs["ttests"])
        assert os.path.exists(outputs["comparison"])


class TestCommandLine:
    def test_usage_error(self, capsys):
        assert main(["train", "--no-such-flag"]) == 1
        assert "error[usage]" in capsys.readouterr().err

    def test_missing_command(self):
        assert main([]) == 1

    def test_flags_override_file(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.delenv("PROPENSITY_SEED", raising=False)
        path = str(tmp_path / "run.json")
        small_run_config(str(tmp_path / "a"), seed=3).save(path)
        args = build_parser().parse_args(["train", "--config", path, "--seed", "8", "--bandwidth", "300",
                                          "--out", str(tmp_path / "b")])
        config = load_config(args)
        assert config.seed == 8
        assert config.kde.bandwidth == 300.0
        assert config.output_dir == str(tmp_path / "b")
        assert config.gbdt.n_trees == 15

    def test_log_level_flag(self, tmp_path, monkeypatch):
        monkeypatch.delenv("PROPENSITY_LOG", raising=False)
        path = str(tmp_path / "run.json")
        small_run_config(str(tmp_path / "a")).save(path)
        quiet = load_config(build_parser().parse_args(["train", "--config", path]))
        loud = load_config(build_parser().parse_args(["train", "--config", path, "--log-level", "debug"]))
        assert loud.log_level == "DEBUG"
        assert loud.config_hash() == quiet.config_hash()

    def test_unknown_log_level_is_a_usage_error(self, capsys):
        assert main(["train", "--log-level", "chatty"]) == 1
        assert "error[usage]" in capsys.readouterr().err

    def test_unexpected_failure_exits_one(self, tmp_path, monkeypatch, capsys):
        path = str(tmp_path / "run.json")
        small_run_config(str(tmp_path / "out")).save(path)

        def broken(config):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr(pipeline, "cmd_synth", broken)
        assert main(["synth", "--config", path]) == 1
        assert "error[internal]: disk on fire" in capsys.readouterr().err

    def test_missing_model_is_a_data_error(self, tmp_path, capsys):
        path = str(tmp_path / "run.json")
        small_run_config(str(tmp_path / "out")).save(path)
        assert main(["classify", "--config", path, "--model", str(tmp_path / "absent.json")]) == 2
        assert "error[missing_file]" in capsys.readouterr().err

    def test_single_class_labels_are_numerical_errors(self, tmp_path, capsys):
        path = str(tmp_path / "run.json")
        out = str(tmp_path / "out")
        small_run_config(out, synth={"enabled": True, "params": {"n_buildings": 300, "n_block_groups": 5}}).save(path)
        assert main(["synth", "--config", path]) == 0
        with open(os.path.join(out, "data", "violations.csv"), "w") as f:
            f.write("bbl,timestamp\n")

        assert main(["train", "--config", path]) == 3
        assert "degenerate_labels" in capsys.readouterr().err


def test_performance_monitor_records_failures():
    monitor = PerformanceMonitor()
    with monitor.stage("ok"):
        pass
    with pytest.raises(RuntimeError):
        with monitor.stage("broken"):
            raise RuntimeError("boom")
    assert [s.stage for s in monitor.stages] == ["ok", "broken"]
    assert monitor.get("broken").ok is False
    assert monitor.to_dict()["stages"][0]["stage"] == "ok"


@pytest.mark.slow
def test_model_accuracy_and_bias_recovery(tmp_path):
    config = small_run_config(
        str(tmp_path / "out"),
        gbdt={"n_trees": 100, "max_depth": 3, "min_leaf": 20},
        synth={"enabled": True, "params": {
            "n_buildings": 20000,
            "n_block_groups": 200,
            "propensity_weights": {"pct_limited_english": -1.0, "median_income": 0.8},
        }},
    )
    pipeline.cmd_pipeline(config)

    with open(pipeline.output_path(config, "metrics")) as f:
        metrics = json.load(f)
    assert metrics["balanced"]["accuracy"] > 0.6

    with open(pipeline.output_path(config, "ttests")) as f:
        rows = {r["feature"]: r for r in csv.DictReader(f)}
    assert float(rows["pct_limited_english"]["t"]) > 0
    assert float(rows["median_income"]["t"]) < 0
    assert float(rows["median_income"]["p_bonferroni"]) < 0.05
