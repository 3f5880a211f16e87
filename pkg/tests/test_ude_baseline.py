import numpy as np
import pytest
import torch

from hidden_physics.autodiff import DTYPE, param_grad
from hidden_physics.dynamics import viscous_burgers
from hidden_physics.errors import ConfigurationError
from hidden_physics.neural import zero_network
from hidden_physics.sampling import Dataset, MeasurementSchedule, integrate, rk4_integrate, sample_measurements
from hidden_physics.trainer import HiddenModel, build_hidden
from hidden_physics.ude_baseline import UdeConfig, ude_solve, ude_train
from tests.conftest import TrueLvHidden, assert_grads_close, fd_gradient

GRID = torch.linspace(0.0, 3.0, 16, dtype=DTYPE)


def tiny_ude(**changes):
    base = dict(hidden_layers=[6], step=0.05, iterations=5, eval_grid=20, progress=False, log_every=5)
    base.update(changes)
    return UdeConfig(**base)


class TestSolve:
    def test_zero_network_is_known_part_only(self, lv_system):
        hidden = HiddenModel(zero_network([2, 4, 2]), lv_system.hidden_coupling)
        u0 = torch.tensor(lv_system.initial_state, dtype=DTYPE)
        with torch.no_grad():
            ude = ude_solve(lv_system, hidden, GRID, u0, step=1e-2)
            known = integrate(lv_system.known_rhs, u0, GRID, step=1e-2)
        assert torch.equal(ude, known)

    def test_true_term_reproduces_reference(self, lv_system):
        hidden = HiddenModel(TrueLvHidden(), lv_system.hidden_coupling)
        u0 = torch.tensor(lv_system.initial_state, dtype=DTYPE)
        with torch.no_grad():
            ude = ude_solve(lv_system, hidden, GRID, u0, step=1e-3).numpy()
        reference = rk4_integrate(lv_system, GRID.numpy(), step=1e-3).states
        np.testing.assert_allclose(ude, reference, atol=1e-12)

    @pytest.mark.numerics
    def test_trajectory_gradient_matches_finite_differences(self, lv_system, lv_dataset):
        hidden = build_hidden(lv_system, [2], seed=0)
        assert sum(p.numel() for p in hidden.parameters()) <= 12
        grid = torch.tensor([0.0, 0.5, 1.0], dtype=DTYPE)
        u0 = torch.tensor(lv_system.initial_state, dtype=DTYPE)
        targets = torch.tensor([lv_system.initial_state, [1.0, 4.0], [2.0, 3.0]], dtype=DTYPE)

        def loss():
            return ((ude_solve(lv_system, hidden, grid, u0, step=0.05) - targets) ** 2).sum(dim=1).mean()

        networks = {"hidden": hidden}
        assert_grads_close(param_grad(loss(), networks), fd_gradient(loss, networks), rtol=1e-4)

    def test_pde_rejected(self):
        system = viscous_burgers()
        with pytest.raises(ConfigurationError):
            ude_solve(system, None, GRID, torch.zeros(1, dtype=DTYPE), step=0.1)


class TestTrain:
    def test_zero_iterations_leave_network_unchanged(self, lv_system, lv_dataset):
        hidden = build_hidden(lv_system, [6], seed=3, mode="decoupled")
        before = hidden.net.flat_parameters().clone()
        result = ude_train(lv_system, lv_dataset, tiny_ude(iterations=0), hidden=hidden)
        assert torch.equal(result.hidden.net.flat_parameters(), before)
        assert result.report.loss_measurement == []

    def test_training_reduces_trajectory_misfit(self, lv_system, lv_dataset, lv_reference):
        result = ude_train(lv_system, lv_dataset, tiny_ude(iterations=40), reference=lv_reference)
        trace = result.report.loss_measurement
        assert min(trace[-5:]) < trace[0]
        assert result.report.method == "ude"
        assert result.report.hidden_mse is not None

    def test_deterministic(self, lv_system, lv_dataset):
        first = ude_train(lv_system, lv_dataset, tiny_ude(seed=5)).report.loss_measurement
        second = ude_train(lv_system, lv_dataset, tiny_ude(seed=5)).report.loss_measurement
        assert first == second

    def test_needs_initial_record(self, lv_system, lv_reference):
        data = sample_measurements(lv_reference, MeasurementSchedule(kind="times", times=[0.5, 1.0]), lv_system)
        with pytest.raises(ConfigurationError, match="t=0"):
            ude_train(lv_system, data, tiny_ude())

    def test_empty_dataset(self, lv_system):
        empty = Dataset(times=np.zeros(0), spatial=np.zeros((0, 0)), states=np.zeros((0, 2)), state_names=("x", "y"))
        with pytest.raises(ConfigurationError):
            ude_train(lv_system, empty, tiny_ude())

    def test_rollout_starts_from_initial_record(self, lv_system, lv_dataset):
        order = np.arange(len(lv_dataset))[::-1]
        shuffled = Dataset(
            times=lv_dataset.times[order],
            spatial=lv_dataset.spatial[order],
            states=lv_dataset.states[order],
            state_names=lv_dataset.state_names,
        )
        result = ude_train(lv_system, shuffled, tiny_ude(iterations=2, seed=9))
        initial = lv_dataset.states[lv_dataset.times == 0.0][0]
        np.testing.assert_array_equal(result.u0.numpy(), initial)
        assert result.config.seed == 9

        solved = result.trajectory(lv_system)
        assert solved["t"].size == 20
        np.testing.assert_array_equal(solved["states"][0], initial)
