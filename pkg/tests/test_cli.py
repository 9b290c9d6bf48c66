import json

import numpy as np
import pytest

from artifact.cli import main
from artifact.evaluation import MetricReport

from pipeline import run, run_pipeline, tree_bytes


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipe"))


class TestCommands:
    def test_synth_is_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert run("synth", "--seed", 7, "--out-dir", tmp_path / name) == 0
        a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        assert a == b and any(k.endswith(".clean.csv") for k in a)

    def test_detect_without_model_exits_2(self, tmp_path, capsys):
        assert run("detect", "--input", tmp_path, "--out-dir", tmp_path / "o") == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "MissingInputError"

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"train": {"dropout": 0.5}}))
        assert run("synth", "--config", p, "--out-dir", tmp_path / "o") == 2
        assert "dropout" in capsys.readouterr().err

    def test_out_of_range_hyperparameter_exits_2(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"train": {"lr": 0.1}}))
        assert run("synth", "--config", p, "--out-dir", tmp_path / "o") == 2

    def test_format_version_mismatch_exits_2(self, tmp_path):
        bad = tmp_path / "vae.json"
        bad.write_text(json.dumps({"format": "artifact-model", "format_version": 99}))
        assert run("extract", "--input", tmp_path, "--model", bad, "--out-dir", tmp_path / "o") == 2

    def test_out_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ARTIFACT_OUT_DIR", str(tmp_path / "env"))
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"synth": {"n_recordings": 1, "length": 100}}))
        assert main(["synth", "--config", str(p)]) == 0
        assert (tmp_path / "env" / "rec0.csv").exists()


class TestPipeline:
    def test_metric_report_written(self, pipeline_dirs):
        report = MetricReport.read_csv(pipeline_dirs["eval"] / "metrics.csv")
        assert {r.detector for r in report.rows} == {"vae_if"}
        split = json.loads((pipeline_dirs["model"] / "split.json").read_text())
        assert {r.recording for r in report.rows} == set(split["test"])

    def test_manifests(self, pipeline_dirs):
        m = json.loads((pipeline_dirs["det"] / "manifest.json").read_text())
        assert m["command"] == "detect" and m["seed"] == 0
        assert m["format_versions"]["model"] == 1
        assert m["inputs"] and m["outputs"]
        assert "time" not in json.dumps(m).lower().replace("timestamp", "")

    def test_detections_binary(self, pipeline_dirs):
        for p in pipeline_dirs["det"].glob("*.detections.csv"):
            rows = np.loadtxt(p, delimiter=",", skiprows=1)
            assert set(np.unique(rows[:, 1:])) <= {0.0, 1.0}

    def test_latents_and_plots(self, pipeline_dirs):
        assert len(list(pipeline_dirs["latent"].glob("*.latent.csv"))) == 5 * 3
        assert (pipeline_dirs["tsne"] / "tsne.csv").exists()
        assert len(list(pipeline_dirs["plot"].glob("*.overlay.svg"))) == 1
