import json

import pandas as pd
import pytest

from hidden_physics.config import ExperimentConfig, load_config
from hidden_physics.errors import ConfigurationError
from hidden_physics.neural import load_checkpoint
from hidden_physics.pipeline import ExperimentPipeline, run_experiment, seed_metrics
from hidden_physics.sweeps import compare_methods
from tests.conftest import tiny_lv_config, tiny_ude_section


def tiny_burgers_config() -> dict:
    return {
        "name": "tiny_burgers",
        "system": {"name": "viscous_burgers"},
        "schedule": {"kind": "times", "times": [0.0, 0.5], "spatial_points": 16},
        "collocation": {"n_interior": 20, "n_boundary": 4},
        "reference": {"nx": 65, "nt": 3},
        "train": {
            "iterations": 3,
            "surrogate_layers": [8],
            "hidden_layers": [8],
            "eval_grid": 5,
            "eval_spatial": 8,
            "progress": False,
        },
        "symreg": {"sources": ["training"]},
        "seeds": [0],
    }


class TestRunExperiment:
    def test_training_artifacts(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config())
        run_dir = run_experiment(config, tmp_path / "lv")
        seed_dir = run_dir / "seed_0"
        for name in ("dataset.csv", "collocation.csv", "surrogate.safetensors", "hidden.safetensors",
                     "report.json", "loss_trace.csv", "hidden_eval.csv", "symbolic.json", "metrics.json"):
            assert (seed_dir / name).is_file(), name
        assert not (seed_dir / "solution_grid.csv").exists()

        summary = json.loads((run_dir / "summary.json").read_text())
        assert [m["seed"] for m in summary["seeds"]] == [0]
        assert summary["median"]["pinn_hidden_mse"] == summary["seeds"][0]["pinn_hidden_mse"]

        trace = pd.read_csv(seed_dir / "loss_trace.csv")
        assert len(trace) == 5
        assert load_checkpoint(seed_dir / "hidden.safetensors").extras["inputs"] == ["x", "y"]

    def test_manifest_reproduces_config(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config())
        run_dir = run_experiment(config, tmp_path / "lv", dry_run=True)
        assert load_config(run_dir / "manifest.json") == config

    def test_dry_run_writes_manifest_only(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config())
        run_dir = run_experiment(config, tmp_path / "lv", dry_run=True)
        assert sorted(p.name for p in run_dir.iterdir()) == ["manifest.json"]

    def test_generate_mode(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config(mode="generate"))
        seed_dir = run_experiment(config, tmp_path / "data") / "seed_0"
        assert (seed_dir / "dataset.csv").is_file()
        assert (seed_dir / "collocation.csv").is_file()
        assert not (seed_dir / "hidden.safetensors").exists()
        frame = pd.read_csv(seed_dir / "collocation.csv")
        assert (frame["kind"] == "interior").sum() == 20

    def test_default_output_root(self):
        config = ExperimentConfig.model_validate(tiny_lv_config(mode="generate"))
        run_dir = run_experiment(config)
        assert run_dir.parent.name == "runs"
        assert run_dir.name == "tiny_lv"

    def test_schedule_beyond_horizon(self, tmp_path):
        mapping = tiny_lv_config(schedule={"kind": "times", "times": [0.0, 7.0]})
        with pytest.raises(ConfigurationError):
            run_experiment(ExperimentConfig.model_validate(mapping), tmp_path / "bad")
        assert not (tmp_path / "bad").exists()

    def test_reruns_are_identical(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config())
        first = run_experiment(config, tmp_path / "a") / "seed_0"
        second = run_experiment(config, tmp_path / "b") / "seed_0"
        for name in ("dataset.csv", "collocation.csv", "loss_trace.csv", "hidden_eval.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_seeds_change_data(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config(mode="generate", seeds=[0, 1]))
        run_dir = run_experiment(config, tmp_path / "two")
        first = pd.read_csv(run_dir / "seed_0" / "collocation.csv")
        second = pd.read_csv(run_dir / "seed_1" / "collocation.csv")
        assert not first.equals(second)


class TestPipelineGraph:
    def test_ude_mode_skips_pinn(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config(mode="ude", ude=tiny_ude_section()))
        final = ExperimentPipeline(config).run(0, tmp_path / "seed_0")
        assert final["pinn"] is None
        assert final["ude"] is not None
        assert "ude" in final["symbolic"]
        metrics = seed_metrics(final)
        assert "ude_hidden_mse" in metrics and "pinn_hidden_mse" not in metrics
        assert (tmp_path / "seed_0" / "ude_trajectory.csv").is_file()

    def test_symbolic_metrics(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config(symreg={"sources": ["trajectory"]}))
        metrics = seed_metrics(ExperimentPipeline(config).run(0, tmp_path / "seed_0"))
        for output in ("F1", "F2"):
            assert f"pinn_{output}_expression" in metrics
            assert isinstance(metrics[f"pinn_{output}_recovered"], bool)
            assert f"pinn_{output}_coef" in metrics

    def test_symreg_disabled(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config(symreg={"enabled": False}))
        final = ExperimentPipeline(config).run(0, tmp_path / "seed_0")
        assert final["symbolic"] == {}
        assert not (tmp_path / "seed_0" / "symbolic.json").exists()


class TestCompare:
    def test_comparison_table(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config(ude=tiny_ude_section(), seeds=[0, 1]))
        run_dir = compare_methods(config, tmp_path / "cmp")
        table = pd.read_csv(run_dir / "comparison.csv")
        assert list(table["seed"].astype(str)) == ["0", "1", "median"]
        assert set(table["winner"].dropna()) <= {"pinn", "ude"}

        summary = json.loads((run_dir / "summary.json").read_text())
        block = summary["comparison"]
        assert block["winner"] in ("pinn", "ude")
        assert block["pinn_wins"] + block["ude_wins"] == 2
        for seed in (0, 1):
            seed_dir = run_dir / f"seed_{seed}"
            assert (seed_dir / "hidden.safetensors").is_file()
            assert (seed_dir / "ude_hidden.safetensors").is_file()

    def test_identical_data_for_both_methods(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_lv_config(ude=tiny_ude_section()))
        run_dir = compare_methods(config, tmp_path / "cmp")
        plain = run_experiment(ExperimentConfig.model_validate(tiny_lv_config()), tmp_path / "plain")
        assert (run_dir / "seed_0" / "dataset.csv").read_bytes() == (plain / "seed_0" / "dataset.csv").read_bytes()

    def test_needs_ude_section(self, tmp_path):
        with pytest.raises(ConfigurationError):
            compare_methods(ExperimentConfig.model_validate(tiny_lv_config()), tmp_path / "cmp")


def test_burgers_run_writes_solution_grid(tmp_path):
    run_dir = run_experiment(ExperimentConfig.model_validate(tiny_burgers_config()), tmp_path / "burgers")
    seed_dir = run_dir / "seed_0"
    grid = pd.read_csv(seed_dir / "solution_grid.csv")
    assert list(grid.columns) == ["t", "x", "u_reference", "u_surrogate"]
    assert len(grid) == 3 * 65
    assert len(pd.read_csv(seed_dir / "dataset.csv")) == 32
    assert (seed_dir / "symbolic.json").is_file()
