"""
Shared fixtures: small systems, tiny configs, and a finite-difference oracle
"""

from pathlib import Path
from typing import Callable, Dict, Mapping

import numpy as np
import pytest
import torch
import yaml
from torch import nn

from hidden_physics.dynamics import lotka_volterra
from hidden_physics.sampling import Dataset, MeasurementSchedule, rk4_integrate, sample_measurements
from hidden_physics.settings import get_settings


@pytest.fixture(autouse=True)
def runtime_settings(monkeypatch, tmp_path):
    """Keep run output inside tmp_path and progress bars off"""
    monkeypatch.setenv("HIDDEN_PHYSICS_OUTPUT_ROOT", str(tmp_path / "runs"))
    monkeypatch.setenv("HIDDEN_PHYSICS_PROGRESS_BARS", "false")
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


def fd_gradient(
    loss_fn: Callable[[], torch.Tensor],
    networks: Mapping[str, nn.Module],
    step: float = 1e-6,
) -> Dict[str, torch.Tensor]:
    """Central differences of loss_fn over every trainable parameter entry"""
    result = {}
    for name, net in networks.items():
        pieces = []
        for param in net.parameters():
            if not param.requires_grad:
                continue
            flat = param.data.view(-1)
            grad = torch.zeros_like(flat)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                plus = float(loss_fn().detach())
                flat[i] = original - step
                minus = float(loss_fn().detach())
                flat[i] = original
                grad[i] = (plus - minus) / (2 * step)
            pieces.append(grad)
        result[name] = torch.cat(pieces)
    return result


def assert_grads_close(analytic: Mapping[str, torch.Tensor], numeric: Mapping[str, torch.Tensor], rtol: float = 1e-4):
    for name, expected in numeric.items():
        got = analytic[name]
        scale = torch.clamp(expected.abs(), min=1.0)
        error = ((got - expected).abs() / scale).max()
        assert error < rtol, f"{name}: max relative error {float(error):.2e}"


@pytest.fixture
def lv_system():
    return lotka_volterra()


@pytest.fixture
def lv_reference(lv_system):
    return rk4_integrate(lv_system, np.linspace(0.0, 3.0, 301), step=1e-3)


@pytest.fixture
def lv_dataset(lv_system, lv_reference) -> Dataset:
    return sample_measurements(lv_reference, MeasurementSchedule(kind="count", count=10), lv_system)


def tiny_lv_config(**changes) -> dict:
    """Experiment mapping for a run that finishes in seconds"""
    config = {
        "name": "tiny_lv",
        "mode": "train",
        "system": {"name": "lotka_volterra"},
        "schedule": {"kind": "count", "count": 5},
        "noise": 0.0,
        "collocation": {"n_interior": 20, "n_boundary": 0},
        "reference": {"step": 0.01, "grid_n": 50},
        "train": {
            "iterations": 5,
            "surrogate_layers": [8],
            "hidden_layers": [8],
            "eval_grid": 20,
            "progress": False,
        },
        "seeds": [0],
    }
    for key, value in changes.items():
        config[key] = value
    return config


def tiny_ude_section() -> dict:
    return {"hidden_layers": [8], "step": 0.05, "iterations": 3, "eval_grid": 20, "progress": False}


@pytest.fixture
def write_config(tmp_path) -> Callable[[dict, str], Path]:
    def write(mapping: dict, name: str = "experiment.yaml") -> Path:
        path = tmp_path / name
        path.write_text(yaml.safe_dump(mapping, sort_keys=False))
        return path
    return write


class TrueLvHidden(nn.Module):
    """Oracle hidden term for the default Lotka-Volterra parameters"""

    in_features = 2
    out_features = 2

    def forward(self, states):
        xy = states[:, 0] * states[:, 1]
        return torch.stack([-0.9 * xy, 0.8 * xy], dim=1)
