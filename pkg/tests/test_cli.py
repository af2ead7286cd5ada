import json

import pandas as pd
import pytest

from crash_augmentor.main import EXIT_OK, EXIT_USAGE, main, resolve_config

TINY_EXPERIMENT = """
master_seed = 2

[simulation]
sample_size = 100

[training]
epochs = 5

[experiment]
dispersions = [0.5]
synthetic_sizes = [0, 50]
ns_replications = 2
prediction_replications = 2
"""


class TestResolveConfig:
    def test_flags_override_file_and_preset(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(TINY_EXPERIMENT)
        config = resolve_config("smoke", path, {"training": {"epochs": 7, "seed": None}, "master_seed": None})
        assert config.training.epochs == 7
        assert config.master_seed == 2
        assert config.experiment.synthetic_sizes == [0, 50]
        assert config.simulation.dispersion == 0.5


class TestSimulate:
    def test_writes_datasets_and_manifest(self, tmp_path):
        code = main(["simulate", "--dispersion", "0.5", "--size", "10", "--replications", "3",
                     "--seed", "1", "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        files = sorted(p.name for p in tmp_path.glob("sim_*.csv"))
        assert files == ["sim_0000.csv", "sim_0001.csv", "sim_0002.csv"]
        frame = pd.read_csv(tmp_path / "sim_0000.csv")
        assert list(frame.columns) == ["x1", "x2", "x3", "x4", "count", "lambda"]
        assert len(frame) == 10
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["config"]["simulation"]["sample_size"] == 10

    def test_same_seed_same_files(self, tmp_path):
        for name in ("a", "b"):
            assert main(["simulate", "--size", "10", "--seed", "3", "--out-dir", str(tmp_path / name)]) == EXIT_OK
        assert (tmp_path / "a" / "sim_0000.csv").read_bytes() == (tmp_path / "b" / "sim_0000.csv").read_bytes()

    def test_invalid_dispersion(self, tmp_path):
        assert main(["simulate", "--dispersion=-1", "--out-dir", str(tmp_path)]) == EXIT_USAGE

    def test_unknown_command(self):
        assert main(["frobnicate"]) == EXIT_USAGE


class TestPipeline:
    @pytest.fixture
    def data_csv(self, tmp_path):
        assert main(["simulate", "--preset", "intersections", "--size", "80", "--seed", "2",
                     "--out-dir", str(tmp_path)]) == EXIT_OK
        return tmp_path / "intersections_0000.csv"

    def test_train_augment_fit_screen(self, tmp_path, data_csv, capsys):
        model = tmp_path / "cgan.model"
        assert main(["train", "--data", str(data_csv), "--out", str(model), "--epochs", "5",
                     "--log-features", "aadt_major", "--log-features", "aadt_minor"]) == EXIT_OK
        assert model.exists()
        assert (tmp_path / "cgan_history.csv").exists()

        augmented = tmp_path / "augmented.csv"
        assert main(["augment", "--model", str(model), "--n", "40", "--seed", "1",
                     "--out", str(augmented), "--merge-with", str(data_csv)]) == EXIT_OK
        frame = pd.read_csv(augmented)
        assert len(frame) == 120
        assert frame["synthetic"].sum() == 40

        spf = tmp_path / "spf.json"
        assert main(["fit", "--data", str(augmented), "--out", str(spf),
                     "--log-features", "aadt_major", "--log-features", "aadt_minor"]) == EXIT_OK
        assert "ln(aadt_major)" in capsys.readouterr().out

        hotspots = tmp_path / "hotspots.csv"
        assert main(["screen", "--data", str(data_csv), "--model", str(spf), "--top-k", "5",
                     "--out", str(hotspots)]) == EXIT_OK
        ranked = pd.read_csv(hotspots)
        assert len(ranked) == 80
        assert ranked["hotspot"].sum() == 5
        assert ranked["eb"].is_monotonic_decreasing

    def test_screen_k_too_large(self, tmp_path, data_csv):
        spf = tmp_path / "spf.json"
        assert main(["fit", "--data", str(data_csv), "--out", str(spf),
                     "--log-features", "aadt_major", "--log-features", "aadt_minor"]) == EXIT_OK
        assert main(["screen", "--data", str(data_csv), "--model", str(spf), "--top-k", "81",
                     "--out", str(tmp_path / "h.csv")]) == EXIT_USAGE

    def test_missing_model(self, tmp_path):
        assert main(["augment", "--model", str(tmp_path / "none.model"), "--n", "5"]) == EXIT_USAGE

    def test_corrupt_csv(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,count\n0.5,1\nabc,2\n")
        assert main(["fit", "--data", str(path), "--out", str(tmp_path / "spf.json")]) == EXIT_USAGE


class TestExperiment:
    def test_dry_run(self, tmp_path, capsys):
        assert main(["experiment", "--dry-run", "--scale", "0.01", "--out-dir", str(tmp_path)]) == EXIT_OK
        plan = json.loads(capsys.readouterr().out)
        assert plan["ns_replications"] == 10
        assert plan["dispersions"] == [0.5, 1.5]
        assert not (tmp_path / "report.csv").exists()

    def test_run_and_report(self, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text(TINY_EXPERIMENT)
        run_dir = tmp_path / "run"
        assert main(["experiment", "--preset", "smoke", "--config", str(config),
                     "--out-dir", str(run_dir)]) == EXIT_OK
        report = pd.read_csv(run_dir / "report.csv")
        assert len(report) == 2 * 2 * 2
        summary = (run_dir / "summary.json").read_text()

        (run_dir / "summary.json").unlink()
        assert main(["report", "--run-dir", str(run_dir)]) == EXIT_OK
        assert (run_dir / "summary.json").read_text() == summary
        assert "alpha = 0.5" in capsys.readouterr().out

    def test_realworld_mode(self, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text("[training]\nepochs = 3\n\n[real_world]\nsynthetic_size = 30\n")
        assert main(["experiment", "--mode", "realworld", "--config", str(config),
                     "--out-dir", str(tmp_path)]) == EXIT_OK
        result = json.loads((tmp_path / "realworld.json").read_text())
        assert result["synthetic_size"] == 30
        assert result["train_size"] == 100
