"""
End-to-end tests of the command-line pipeline on tiny experiments.
"""
import io
import json
from pathlib import Path

import numpy as np
import pytest

from app.cli import main
from app.core.config import default_config, dump_config, load_config
from app.services import storage
from tests.conftest import tiny_burgers_config, tiny_kdv_config

pytestmark = pytest.mark.integration


def run(argv):
    """Run one command; returns (exit status, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    status = main([str(a) for a in argv], out=out, err=err)
    return status, out.getvalue(), err.getvalue()


def write_config(config, path: Path) -> Path:
    path.write_text(dump_config(config), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """Generated data and a trained model for the tiny Burgers experiment."""
    root = tmp_path_factory.mktemp("burgers")
    config = tiny_burgers_config(root)
    config_path = write_config(config, root / "experiment.json")

    status, out, err = run(["gen-data", "--config", config_path])
    assert status == 0, err
    generated = json.loads(out)

    status, out, err = run(["train", "--config", config_path])
    assert status == 0, err
    trained = json.loads(out)
    return {"root": root, "config": config, "config_path": config_path, "gen": generated, "train": trained}


class TestGenerateAndTrain:
    """Data generation and training commands."""

    def test_generated_files(self, trained_run):
        root = trained_run["root"]
        assert trained_run["gen"]["simulations"] == 2
        assert sorted(p.name for p in (root / "data").glob("*.lsnap")) == ["burgers_000.lsnap", "burgers_001.lsnap"]
        manifest = storage.read_manifest(root / "data" / "manifest.json")
        assert manifest["command"] == "gen-data"
        assert len(manifest["simulations"]) == 2

        snapshots = storage.read_snapshots(root / "data" / "burgers_000.lsnap")
        assert snapshots.shape == (81, 6)
        assert np.isfinite(snapshots.values).all()

    def test_training_outputs(self, trained_run):
        root = trained_run["root"]
        assert trained_run["train"]["simulations"] == 2
        assert trained_run["train"]["epochs"] == 3
        assert np.isfinite(trained_run["train"]["final_loss"])

        model = storage.load_model(root / "model.lsem")
        assert model.layout.n_elements == 2
        assert (root / "model.lsem.checkpoint").exists()
        assert (root / "reports" / "train_manifest.json").exists()
        lines = (root / "loss_history.csv").read_text().splitlines()
        assert lines[0] == "epoch,J,J_AE,J_LD,J_reg"
        assert len(lines) == 4

    def test_train_without_data(self, tmp_path):
        config_path = write_config(tiny_burgers_config(tmp_path), tmp_path / "experiment.json")
        status, out, err = run(["train", "--config", config_path])
        assert status == 2
        assert out == ""
        assert json.loads(err.strip().splitlines()[-1])["error"]["command"] == "train"


class TestInferenceCommands:
    """Prediction, evaluation, timing and scaling with a trained model."""

    def test_predict(self, trained_run):
        status, out, err = run(["predict", "--config", trained_run["config_path"]])
        assert status == 0, err
        summary = json.loads(out)
        assert summary["scenario"] == "reproductive"
        assert np.isfinite(summary["relative_l2"])

        reports = trained_run["root"] / "reports"
        predicted = storage.read_snapshots(reports / "predict_reproductive.lsnap")
        assert predicted.shape == (81, 6)
        assert (reports / "predict_reproductive_report.json").exists()
        manifest = storage.read_manifest(reports / "predict_reproductive_manifest.json")
        assert manifest["seeds"] == {"training": 7}

    def test_predict_scale_up(self, trained_run):
        status, out, err = run(["predict", "--config", trained_run["config_path"], "--scenario", "scale-up"])
        assert status == 0, err
        assert json.loads(out)["n_elements"] == 3
        predicted = storage.read_snapshots(trained_run["root"] / "reports" / "predict_scale-up.lsnap")
        assert predicted.grid.n_points > 81

    def test_eval(self, trained_run):
        status, out, err = run(["eval", "--config", trained_run["config_path"]])
        assert status == 0, err
        summary = json.loads(out)
        assert {"peaks_predicted", "peaks_reference", "seam_jump_ratio"} <= set(summary)
        assert "training_reconstruction_l2_mean" in summary

        reports = trained_run["root"] / "reports"
        header = (reports / "eval_reproductive_latent_predicted.csv").read_text().splitlines()[0]
        assert header == "t,z0,z1,z2,z3"
        assert (reports / "eval_reproductive_latent_encoded.csv").exists()
        assert (reports / "eval_reproductive_pointwise_error.csv").exists()

    def test_bench(self, trained_run):
        status, out, err = run(["bench", "--config", trained_run["config_path"]])
        assert status == 0, err
        summary = json.loads(out)
        assert summary["lsem_seconds"] > 0.0
        assert summary["fom_seconds"] > 0.0

    def test_scaling(self, trained_run):
        status, out, err = run(["scaling", "--config", trained_run["config_path"]])
        assert status == 0, err
        points = json.loads(out)["points"]
        assert [p["n_elements"] for p in points] == [1, 2]
        assert (trained_run["root"] / "reports" / "scaling.csv").exists()

    def test_missing_model(self, trained_run, tmp_path):
        status, _, err = run(
            ["predict", "--config", trained_run["config_path"], "--model", tmp_path / "absent.lsem"]
        )
        assert status == 2
        assert json.loads(err.strip().splitlines()[-1])["error"]["code"] == "STORAGE_ERROR"


class TestAblationAndExport:
    """Overlap ablation and CSV conversion."""

    def test_ablate_overlap(self, trained_run, tmp_path):
        status, out, err = run(
            ["ablate-overlap", "--config", trained_run["config_path"], "--output", tmp_path, "--beta", "0,0.1"]
        )
        assert status == 0, err
        rows = json.loads(out)["rows"]
        assert [(r["overlap_points"], r["beta"]) for r in rows] == [(5, 0.0), (5, 0.1), (7, 0.0), (7, 0.1)]
        lines = (tmp_path / "ablation.csv").read_text().splitlines()
        assert lines[0] == "overlap_points,beta,relative_l2,final_loss"
        assert len(lines) == 5

    def test_export_snapshots(self, trained_run, tmp_path):
        source = trained_run["root"] / "data" / "burgers_000.lsnap"
        target = tmp_path / "burgers_000.csv"
        status, out, err = run(["export-csv", source, "--output", target])
        assert status == 0, err
        assert json.loads(out)["kind"] == "snapshots"
        _, _, values = storage.read_snapshots_csv(target)
        np.testing.assert_array_equal(values, storage.read_snapshots(source).values)

    def test_export_report(self, trained_run, tmp_path):
        source = trained_run["root"] / "reports" / "train_manifest.json"
        target = tmp_path / "train.csv"
        status, out, err = run(["export-csv", source, "--output", target])
        assert status == 0, err
        assert "final_loss" in target.read_text().splitlines()[0].split(",")

    def test_export_model_is_rejected(self, trained_run, tmp_path):
        status, _, err = run(["export-csv", trained_run["root"] / "model.lsem", "--output", tmp_path / "m.csv"])
        assert status == 2
        assert json.loads(err.strip().splitlines()[-1])["error"]["code"] == "FILE_FORMAT_ERROR"


class TestConfigCommands:
    """Config inspection."""

    @pytest.mark.parametrize("problem", ["burgers", "kdv"])
    def test_dump_defaults(self, problem):
        status, out, _ = run(["config", "dump-defaults", "--problem", problem])
        assert status == 0
        assert json.loads(out) == json.loads(dump_config(default_config(problem)))

    def test_validate(self, tmp_path):
        path = write_config(tiny_kdv_config(tmp_path), tmp_path / "kdv.json")
        status, out, _ = run(["config", "validate", path])
        assert status == 0
        assert json.loads(out) == {"valid": True, "problem": "kdv"}
        assert load_config(path).layout.topology == "ring"

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"problem": "burgers", "grid": {"n_points": "many"}}', encoding="utf-8")
        status, out, err = run(["config", "validate", path])
        assert status == 2
        assert out == ""
        assert json.loads(err.strip().splitlines()[-1])["error"]["code"] == "CONFIGURATION_ERROR"


class TestKdvPipeline:
    """Periodic problem through generation and training."""

    def test_generate_and_train(self, tmp_path):
        config_path = write_config(tiny_kdv_config(tmp_path), tmp_path / "kdv.json")
        status, out, err = run(["gen-data", "--config", config_path])
        assert status == 0, err
        assert json.loads(out)["simulations"] == 2
        manifest = storage.read_manifest(tmp_path / "data" / "manifest.json")
        assert manifest["seeds"] == {"kdv": 3}
        snapshots = storage.read_snapshots(tmp_path / "data" / "kdv_000.lsnap")
        assert snapshots.grid.periodic

        status, out, err = run(["train", "--config", config_path])
        assert status == 0, err
        assert json.loads(out)["epochs"] == 2

    def test_seed_override_changes_initial_conditions(self, tmp_path):
        config_path = write_config(tiny_kdv_config(tmp_path, count=1), tmp_path / "kdv.json")
        first, second = tmp_path / "a", tmp_path / "b"
        assert run(["gen-data", "--config", config_path, "--data", first])[0] == 0
        assert run(["gen-data", "--config", config_path, "--data", second, "--seed", "11"])[0] == 0
        a = storage.read_snapshots(first / "kdv_000.lsnap").values[:, 0]
        b = storage.read_snapshots(second / "kdv_000.lsnap").values[:, 0]
        assert not np.array_equal(a, b)
