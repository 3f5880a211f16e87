import numpy as np
import pytest
import torch
import yaml
from pydantic import ValidationError

from hidden_physics.autodiff import DTYPE
from hidden_physics.dynamics import (
    ApoptosisParams,
    StateJets,
    SystemConfig,
    apoptosis_rates,
    build_system,
    cell_apoptosis,
    hidden_feature_names,
    hidden_features,
    lotka_volterra,
    viscous_burgers,
)
from hidden_physics.errors import ConfigurationError
from hidden_physics.sampling import rk4_integrate


def states(rows):
    return torch.tensor(rows, dtype=DTYPE)


class TestLotkaVolterra:
    def test_full_rhs_at_unit_state(self, lv_system):
        rhs = lv_system.rhs(states([[1.0, 1.0]]))
        assert rhs[0, 0].item() == pytest.approx(0.4, abs=1e-15)
        assert rhs[0, 1].item() == pytest.approx(-1.0, abs=1e-15)

    def test_hidden_term_vanishes_without_prey(self, lv_system):
        hidden = lv_system.true_hidden(StateJets.from_state(states([[0.0, 0.3], [0.0, 7.0]])))
        assert torch.all(hidden == 0)

    def test_initial_slope_matches_integrator(self, lv_system):
        h = 1e-3
        ref = rk4_integrate(lv_system, np.arange(5) * h, step=h)
        u = ref.states
        slope = (-25 * u[0] + 48 * u[1] - 36 * u[2] + 16 * u[3] - 3 * u[4]) / (12 * h)
        analytic = lv_system.rhs(states([lv_system.initial_state]))[0].numpy()
        np.testing.assert_allclose(slope, analytic, atol=1e-8)

    def test_descriptor(self, lv_system):
        assert hidden_feature_names(lv_system) == ["x", "y"]
        assert lv_system.hidden_targets == ({(1, 1): -0.9}, {(1, 1): 0.8})
        assert lv_system.is_ode

    def test_shared_mode_recorded(self):
        assert lotka_volterra(hidden_mode="shared_scaled").hidden_mode == "shared_scaled"


class TestApoptosis:
    @pytest.mark.parametrize("target", ["v1", "v2"])
    def test_akt_conservation(self, target):
        system = cell_apoptosis(hidden_target=target)
        rng = np.random.default_rng(0)
        rhs = system.rhs(states(rng.uniform(0.0, 1.0, size=(50, 3))))
        assert float((rhs[:, 1] + rhs[:, 2]).abs().max()) <= 1e-15

    def test_no_rates_no_motion(self):
        zero = ApoptosisParams(k0=0, k1=0, km1=0, k2=0, km3=0, kd=0)
        system = cell_apoptosis(zero)
        rhs = system.rhs(states([[0.3, 0.2, 0.1], [1.0, 0.5, 0.4]]))
        assert torch.all(rhs == 0)

    def test_v2_vanishes_without_p53(self):
        rates = apoptosis_rates(ApoptosisParams(), states([[0.0, 0.7, 0.2]]))
        assert rates["v2"].item() == 0.0

    def test_hidden_coupling(self):
        v1 = cell_apoptosis(hidden_target="v1")
        v2 = cell_apoptosis(hidden_target="v2")
        assert v1.hidden_coupling[:, 0].tolist() == [0.0, 1.0, -1.0]
        assert v2.hidden_coupling[:, 0].tolist() == [-1.0, 0.0, 0.0]
        assert hidden_feature_names(v1) == ["p53", "Akt_s", "Akt"]
        assert v1.initial_state == (0.248, 0.0973, 0.0027)

    def test_known_part_excludes_hidden_rate(self):
        system = cell_apoptosis(hidden_target="v1")
        state = states([[0.4, 0.3, 0.2]])
        rates = apoptosis_rates(system.params, state)
        full = system.rhs(state)
        known = system.known_rhs(state)
        assert (full - known)[0, 1].item() == pytest.approx(rates["v1"].item(), rel=1e-12)

    def test_zero_offset_rejected(self):
        with pytest.raises(ValidationError):
            ApoptosisParams(j2=0.0)

    def test_single_output_cannot_share(self):
        with pytest.raises(ConfigurationError):
            build_system(SystemConfig(name="cell_apoptosis", hidden_mode="shared_scaled"))


class TestBurgers:
    def test_initial_condition(self):
        u0 = viscous_burgers().initial_condition(np.array([0.0, -0.5]))[:, 0]
        assert u0[0] == 0.0
        assert u0[1] == pytest.approx(1.0, abs=1e-15)

    def test_hidden_term(self):
        system = viscous_burgers()
        jets = StateJets(value=states([[2.0]]), u_x=states([[[3.0]]]))
        assert system.true_hidden(jets).item() == -6.0

    def test_default_viscosity_and_descriptor(self):
        system = viscous_burgers()
        assert system.params.nu == pytest.approx(1.0 / (1000.0 * np.pi))
        assert system.boundary == "dirichlet"
        assert system.boundary_value == 0.0
        assert hidden_feature_names(system) == ["u", "u_x", "u_t"]
        assert system.domain.spatial_bounds == ((-1.0, 1.0),)

    def test_true_solution_zero_on_boundary(self):
        system = viscous_burgers()
        assert np.allclose(system.initial_condition(np.array([-1.0, 1.0])), 0.0, atol=1e-15)

    @pytest.mark.parametrize("nu", [0.0, -0.1])
    def test_non_positive_viscosity(self, nu):
        with pytest.raises(ConfigurationError):
            viscous_burgers(nu)

    def test_features_stack_in_descriptor_order(self):
        system = viscous_burgers()
        jets = StateJets(value=states([[1.0]]), u_t=states([[3.0]]), u_x=states([[[2.0]]]), u_xx=states([[[9.0]]]))
        assert hidden_features(jets, system).tolist() == [[1.0, 2.0, 3.0]]

    def test_reduced_inputs_variant(self):
        system = build_system(SystemConfig(name="viscous_burgers", hidden_inputs=["u", "u_x"]))
        assert system.hidden_inputs == ("u", "u_x")
        assert system.hidden_targets == ({(1, 1): -1.0},)

    def test_missing_derivative_is_configuration_error(self):
        system = viscous_burgers()
        with pytest.raises(ConfigurationError):
            hidden_features(StateJets(value=states([[1.0]])), system)


class TestSystemConfig:
    def test_hidden_inputs_survive_a_config_file(self):
        config = SystemConfig(name="viscous_burgers", hidden_inputs=["u", "u_x"])
        text = yaml.safe_dump(config.model_dump(mode="json"))
        assert SystemConfig.model_validate(yaml.safe_load(text)) == config

    def test_unknown_input_token(self):
        with pytest.raises(ValidationError):
            SystemConfig(name="lotka_volterra", hidden_inputs=["u_xxx"])

    def test_ode_cannot_take_spatial_derivatives(self):
        with pytest.raises(ConfigurationError):
            build_system(SystemConfig(name="lotka_volterra", hidden_inputs=["u", "u_x"]))

    def test_parameters_flow_through(self):
        system = build_system(SystemConfig(name="lotka_volterra", lv={"beta": 0.5}))
        assert system.hidden_targets[0] == {(1, 1): -0.5}
