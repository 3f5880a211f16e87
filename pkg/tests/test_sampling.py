import math

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from hidden_physics.autodiff import DTYPE
from hidden_physics.dynamics import viscous_burgers
from hidden_physics.errors import ConfigurationError, IntegrationError
from hidden_physics.sampling import (
    CollocationSet,
    Dataset,
    MeasurementSchedule,
    ReferenceSolution,
    add_noise,
    build_collocation,
    burgers_reference,
    evaluation_states,
    integrate,
    latin_hypercube,
    rk4_integrate,
    sample_measurements,
)


def grid(*values):
    return torch.tensor(values, dtype=DTYPE)


@pytest.mark.numerics
class TestRungeKutta:
    def test_zero_rhs_keeps_state(self):
        out = integrate(torch.zeros_like, grid(2.5, -1.0), grid(0.0, 0.4, 1.0), step=1e-3)
        assert torch.all(out == grid(2.5, -1.0))

    def test_exponential_growth(self):
        out = integrate(lambda u: u, grid(1.0), grid(0.0, 1.0), step=1e-3)
        assert abs(out[-1, 0].item() - math.e) < 1e-9

    def test_lands_on_uneven_nodes(self):
        out = integrate(lambda u: -u, grid(1.0), grid(0.0, 0.35, 0.36, 1.0), step=0.1)
        expected = np.exp(-np.array([0.0, 0.35, 0.36, 1.0]))
        np.testing.assert_allclose(out[:, 0].numpy(), expected, atol=1e-5)

    def test_lotka_volterra_step_refinement(self, lv_system):
        times = [0.0, 3.0]
        fine = rk4_integrate(lv_system, times, step=1e-3).states[-1]
        finer = rk4_integrate(lv_system, times, step=5e-4).states[-1]
        assert np.max(np.abs(fine - finer)) < 1e-8

    def test_fourth_order_convergence(self, lv_system):
        times = [0.0, 3.0]
        exact = rk4_integrate(lv_system, times, step=1.25e-3).states[-1]
        coarse = np.max(np.abs(rk4_integrate(lv_system, times, step=2e-2).states[-1] - exact))
        fine = np.max(np.abs(rk4_integrate(lv_system, times, step=1e-2).states[-1] - exact))
        assert 12.0 < coarse / fine < 20.0

    def test_blow_up_reports_time(self):
        with pytest.raises(IntegrationError) as info:
            integrate(lambda u: u ** 2, grid(1.0), grid(0.0, 3.0), step=0.01)
        assert info.value.time > 0.9

    def test_descending_grid_rejected(self):
        with pytest.raises(ConfigurationError):
            integrate(lambda u: u, grid(1.0), grid(0.0, 1.0, 0.5), step=0.1)

    def test_grid_must_start_at_zero(self, lv_system):
        with pytest.raises(ConfigurationError):
            rk4_integrate(lv_system, [0.5, 1.0])

    def test_pde_rejected(self):
        with pytest.raises(ConfigurationError):
            rk4_integrate(viscous_burgers(), [0.0, 1.0])

    def test_gradient_flows_through_the_solve(self):
        rate = torch.tensor(0.7, dtype=DTYPE, requires_grad=True)
        out = integrate(lambda u: rate * u, grid(1.0), grid(0.0, 1.0), step=1e-2)
        (grad,) = torch.autograd.grad(out[-1, 0], rate)
        assert grad.item() == pytest.approx(math.exp(0.7), rel=1e-7)


@pytest.mark.numerics
class TestBurgersReference:
    def test_initial_slice_exact(self):
        ref = burgers_reference(1.0 / (1000 * np.pi), nx=257, nt=3, estimate_accuracy=False)
        np.testing.assert_array_equal(ref.states[0, :, 0], -np.sin(np.pi * ref.x))

    def test_solution_stays_odd(self):
        ref = burgers_reference(1.0 / (1000 * np.pi), nx=257, nt=5, estimate_accuracy=False)
        u = ref.states[..., 0]
        assert np.max(np.abs(u + u[:, ::-1])) < 1e-6
        assert np.all(u[1:, 0] == 0) and np.all(u[1:, -1] == 0)

    def test_output_times_include_requested(self):
        ref = burgers_reference(0.01, nx=129, output_times=[0.0, 0.5], estimate_accuracy=False)
        assert ref.times.tolist() == [0.0, 0.5]
        assert ref.states.shape == (2, 129, 1)

    @pytest.mark.slow
    def test_grid_refinement_off_shock(self):
        ref = burgers_reference(1.0 / (1000 * np.pi), nx=2048, nt=11)
        assert ref.accuracy < 1e-3

    def test_invalid_viscosity(self):
        with pytest.raises(ConfigurationError):
            burgers_reference(0.0)


class TestNoise:
    def test_zero_noise_is_identity(self, lv_dataset):
        assert add_noise(lv_dataset, 0.0, seed=1) is lv_dataset

    def test_scale_is_relative_to_mean_magnitude(self):
        n = 100_000
        data = Dataset(times=np.zeros(n), spatial=np.zeros((n, 0)), states=np.full((n, 1), 5.0), state_names=("c",))
        noisy = add_noise(data, 0.1, seed=3)
        assert abs(np.std(noisy.states[:, 0], ddof=1) - 0.5) < 0.025
        assert noisy.epsilon == 0.1 and noisy.seed == 3

    def test_deterministic_per_seed(self, lv_dataset):
        a = add_noise(lv_dataset, 5e-3, seed=7).states
        b = add_noise(lv_dataset, 5e-3, seed=7).states
        c = add_noise(lv_dataset, 5e-3, seed=8).states
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_empty_dataset(self):
        empty = Dataset(times=np.zeros(0), spatial=np.zeros((0, 0)), states=np.zeros((0, 2)), state_names=("x", "y"))
        with pytest.raises(ConfigurationError):
            add_noise(empty, 0.1, seed=0)


class TestLatinHypercube:
    def test_single_point(self):
        points = latin_hypercube(1, [(0.0, 1.0), (0.0, 1.0)], seed=0)
        assert points.shape == (1, 2)
        assert np.all((points >= 0) & (points < 1))

    def test_quartiles(self):
        points = np.sort(latin_hypercube(4, [(0.0, 1.0)], seed=5)[:, 0])
        for k, p in enumerate(points):
            assert k / 4 <= p < (k + 1) / 4

    @pytest.mark.parametrize("n", [1, 4, 100, 10_000])
    def test_one_point_per_stratum(self, n):
        points = latin_hypercube(n, [(0.0, 1.0), (0.0, 1.0)], seed=n)
        for column in points.T:
            assert np.array_equal(np.sort(np.floor(column * n).astype(int)), np.arange(n))

    def test_scaled_box(self):
        points = latin_hypercube(10_000, [(-1.0, 1.0), (0.0, 1.0)], seed=2)
        assert points[:, 0].min() >= -1.0 and points[:, 0].max() < 1.0
        assert points[:, 1].min() >= 0.0 and points[:, 1].max() < 1.0

    def test_deterministic(self):
        box = [(0.0, 3.0)]
        assert np.array_equal(latin_hypercube(50, box, seed=9), latin_hypercube(50, box, seed=9))

    @pytest.mark.parametrize("n, box", [(0, [(0.0, 1.0)]), (5, [(1.0, 1.0)]), (5, [])])
    def test_invalid_requests(self, n, box):
        with pytest.raises(ConfigurationError):
            latin_hypercube(n, box, seed=0)


class TestCollocation:
    def test_burgers_membership(self):
        colloc = build_collocation(viscous_burgers(), n_interior=10_000, n_boundary=100, seed=1)
        interior, boundary = colloc.interior, colloc.boundary
        assert interior.shape == (10_000, 2) and boundary.shape == (100, 2)
        assert np.all((interior[:, 0] >= -1) & (interior[:, 0] < 1))
        assert np.all((interior[:, 1] > 0) & (interior[:, 1] <= 1))
        assert set(np.unique(boundary[:, 0])) == {-1.0, 1.0}
        assert np.all((boundary[:, 1] > 0) & (boundary[:, 1] <= 1))

    def test_ode_has_no_boundary(self, lv_system):
        colloc = build_collocation(lv_system, n_interior=100, n_boundary=0, seed=0)
        assert colloc.n_boundary == 0
        assert np.all((colloc.interior > 0) & (colloc.interior <= 3.0))

    def test_pde_needs_boundary_points(self):
        with pytest.raises(ConfigurationError):
            build_collocation(viscous_burgers(), n_interior=10, n_boundary=0, seed=0)

    def test_csv_loader(self, tmp_path):
        colloc = build_collocation(viscous_burgers(), n_interior=30, n_boundary=6, seed=4)
        loaded = CollocationSet.from_csv(colloc.to_csv(tmp_path / "c.csv"), spatial_names=("x",))
        assert np.array_equal(loaded.interior, colloc.interior)
        assert np.array_equal(loaded.boundary, colloc.boundary)


class TestSchedules:
    def test_initial_condition_only(self):
        assert MeasurementSchedule(kind="count", count=1).times_for(3.0).tolist() == [0.0]

    def test_spacing(self):
        times = MeasurementSchedule(kind="spacing", spacing=0.6).times_for(3.0)
        np.testing.assert_allclose(times, [0.0, 0.6, 1.2, 1.8, 2.4, 3.0])

    def test_count(self):
        np.testing.assert_allclose(MeasurementSchedule(kind="count", count=10).times_for(3.0), np.linspace(0, 3, 10))

    def test_time_outside_horizon(self):
        with pytest.raises(ConfigurationError):
            MeasurementSchedule(kind="times", times=[0.0, 4.0]).times_for(3.0)

    def test_kind_needs_its_field(self):
        with pytest.raises(ValidationError):
            MeasurementSchedule(kind="spacing")

    def test_ode_measurements(self, lv_system, lv_reference):
        data = sample_measurements(lv_reference, MeasurementSchedule(kind="count", count=1), lv_system)
        assert len(data) == 1
        np.testing.assert_array_equal(data.states[0], np.array(lv_system.initial_state))

    def test_burgers_two_slices(self):
        system = viscous_burgers()
        ref = burgers_reference(system.params.nu, nx=129, output_times=[0.0, 0.5], estimate_accuracy=False)
        data = sample_measurements(ref, MeasurementSchedule(kind="times", times=[0.0, 0.5], spatial_points=64), system)
        assert sorted(set(data.times.tolist())) == [0.0, 0.5]
        assert len(data) == 128
        assert data.points().shape == (128, 2)


class TestReferenceAndEvaluation:
    def test_state_interpolation(self):
        ref = ReferenceSolution(times=np.array([0.0, 1.0]), states=np.array([[0.0], [2.0]]))
        assert ref.state_at(0.25)[0] == pytest.approx(0.5)
        assert ref.state_at(1.0)[0] == 2.0
        with pytest.raises(ConfigurationError):
            ref.state_at(1.5)

    def test_ode_evaluation_grid(self, lv_system, lv_reference):
        evaluation = evaluation_states(lv_system, lv_reference, grid_n=300)
        assert len(evaluation) == 300
        assert evaluation.jets.u_t.shape == (300, 2)

    def test_burgers_evaluation_excludes_shock_band(self):
        system = viscous_burgers()
        ref = burgers_reference(system.params.nu, nx=129, nt=3, estimate_accuracy=False)
        evaluation = evaluation_states(system, ref, spatial_n=129, exclude_band=0.05)
        assert np.all(np.abs(evaluation.points[:, 0]) > 0.05)
        assert evaluation.jets.u_x.shape == (len(evaluation), 1, 1)

    def test_dataset_csv_loader(self, lv_dataset, tmp_path):
        loaded = Dataset.from_csv(lv_dataset.to_csv(tmp_path / "d.csv"))
        assert loaded.state_names == ("x", "y")
        assert np.array_equal(loaded.states, lv_dataset.states)
