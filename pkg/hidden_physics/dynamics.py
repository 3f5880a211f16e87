"""
Differential systems with a known operator part and a hidden term

A system declares its domain, the known right-hand side N_K, the true hidden
term F_true (used to synthesize data and score learned terms), the inputs the
hidden network receives, and how the hidden outputs couple into the state
equations:  u_t = N_K[u] + C @ F[u].
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator
from torch import Tensor

from .autodiff import DTYPE
from .errors import ConfigurationError

logger = logging.getLogger(__name__)

HiddenMode = Literal["decoupled", "shared_scaled"]
BoundaryKind = Literal["none", "dirichlet"]
HIDDEN_INPUT_TOKENS = ("u", "u_x", "u_xx", "u_t")

# exponent tuple over the hidden-input feature names -> coefficient
Monomials = Dict[Tuple[int, ...], float]


@dataclass(frozen=True)
class DomainSpec:
    spatial_bounds: Tuple[Tuple[float, float], ...]
    horizon: float
    spatial_names: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigurationError(f"Time horizon must be positive, got {self.horizon}")
        for lo, hi in self.spatial_bounds:
            if not lo < hi:
                raise ConfigurationError(f"Spatial bounds must be ordered, got ({lo}, {hi})")
        if self.spatial_names and len(self.spatial_names) != len(self.spatial_bounds):
            raise ConfigurationError("One spatial name per spatial dimension is required")
        if not self.spatial_names:
            names = ("x",) if len(self.spatial_bounds) == 1 else tuple(f"x{i}" for i in range(len(self.spatial_bounds)))
            object.__setattr__(self, "spatial_names", names)

    @property
    def spatial_dim(self) -> int:
        return len(self.spatial_bounds)

    @property
    def input_dim(self) -> int:
        """Network input width: spatial coordinates followed by time"""
        return self.spatial_dim + 1


@dataclass
class StateJets:
    """
    Surrogate state and its derivatives at a batch of points

    value, u_t: (n, m); u_x, u_xx: (n, m, d) with d the spatial dimension
    """

    value: Tensor
    u_t: Optional[Tensor] = None
    u_x: Optional[Tensor] = None
    u_xx: Optional[Tensor] = None

    @classmethod
    def from_state(cls, value: Tensor) -> "StateJets":
        return cls(value=value)

    def component(self, index: int) -> Tensor:
        return self.value[:, index]


Operator = Callable[[StateJets], Tensor]


@dataclass(frozen=True)
class DifferentialSystem:
    name: str
    domain: DomainSpec
    state_names: Tuple[str, ...]
    known_operator: Operator
    hidden_operator: Optional[Operator]
    hidden_inputs: Tuple[str, ...]
    hidden_coupling: Tensor
    hidden_names: Tuple[str, ...]
    params: BaseModel
    boundary: BoundaryKind = "none"
    boundary_value: float = 0.0
    initial_state: Optional[Tuple[float, ...]] = None
    initial_condition: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hidden_targets: Optional[Tuple[Monomials, ...]] = None
    hidden_mode: HiddenMode = "decoupled"
    extras: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        d = self.domain.spatial_dim
        if self.boundary == "none" and d != 0:
            raise ConfigurationError(f"{self.name}: a spatial domain needs a boundary condition")
        if self.boundary != "none" and d == 0:
            raise ConfigurationError(f"{self.name}: an ODE has no boundary")
        unknown = [token for token in self.hidden_inputs if token not in HIDDEN_INPUT_TOKENS]
        if unknown:
            raise ConfigurationError(f"{self.name}: unknown hidden inputs {unknown}")
        if not self.hidden_inputs:
            raise ConfigurationError(f"{self.name}: the hidden term needs at least one input")
        if d == 0 and any(token in ("u_x", "u_xx") for token in self.hidden_inputs):
            raise ConfigurationError(f"{self.name}: an ODE has no spatial derivatives to feed the hidden term")
        if tuple(self.hidden_coupling.shape) != (self.state_dim, self.hidden_dim):
            raise ConfigurationError(
                f"{self.name}: coupling shape {tuple(self.hidden_coupling.shape)} does not match "
                f"{self.state_dim} states x {self.hidden_dim} hidden outputs"
            )
        if set(self.state_names) & set(self.domain.spatial_names):
            raise ConfigurationError(f"{self.name}: state names collide with spatial coordinate names")
        if d == 0 and (self.initial_state is None or len(self.initial_state) != self.state_dim):
            raise ConfigurationError(f"{self.name}: an ODE needs one initial value per state")
        if d > 0 and self.initial_condition is None:
            raise ConfigurationError(f"{self.name}: a PDE needs an initial condition function")
        if self.hidden_mode == "shared_scaled" and self.hidden_dim < 2:
            raise ConfigurationError(f"{self.name}: shared_scaled mode needs at least two hidden outputs")

    @property
    def state_dim(self) -> int:
        return len(self.state_names)

    @property
    def hidden_dim(self) -> int:
        return len(self.hidden_names)

    @property
    def is_ode(self) -> bool:
        return self.domain.spatial_dim == 0

    @property
    def horizon(self) -> float:
        return self.domain.horizon

    def couple(self, hidden: Tensor) -> Tensor:
        """Map hidden outputs (n, k) to per-state contributions (n, m)"""
        return hidden @ self.hidden_coupling.T

    def true_hidden(self, jets: StateJets) -> Tensor:
        if self.hidden_operator is None:
            raise ConfigurationError(f"{self.name}: no true hidden term declared")
        return self.hidden_operator(jets)

    def known_rhs(self, state: Tensor) -> Tensor:
        return self.known_operator(StateJets.from_state(state))

    def rhs(self, state: Tensor) -> Tensor:
        """Full ODE right-hand side N_K + C @ F_true at states (n, m)"""
        jets = StateJets.from_state(state)
        return self.known_operator(jets) + self.couple(self.true_hidden(jets))

    def with_hidden_inputs(self, tokens: Sequence[str]) -> "DifferentialSystem":
        return _replace(self, hidden_inputs=tuple(tokens), hidden_targets=None)

    def with_hidden_mode(self, mode: HiddenMode) -> "DifferentialSystem":
        return _replace(self, hidden_mode=mode)


def _replace(system: DifferentialSystem, **changes) -> DifferentialSystem:
    return replace(system, **changes)


# ============================================================================
# HIDDEN-TERM INPUT FEATURES
# ============================================================================

def hidden_feature_names(system: DifferentialSystem) -> List[str]:
    names: List[str] = []
    for token in system.hidden_inputs:
        if token == "u":
            names.extend(system.state_names)
        elif token == "u_t":
            names.extend(f"{s}_t" for s in system.state_names)
        else:
            repeat = 1 if token == "u_x" else 2
            for s in system.state_names:
                names.extend(f"{s}_{coord * repeat}" for coord in system.domain.spatial_names)
    return names


def hidden_feature_dim(system: DifferentialSystem) -> int:
    return len(hidden_feature_names(system))


def hidden_features(jets: StateJets, system: DifferentialSystem) -> Tensor:
    """Stack the hidden network's inputs from state jets, (n, features)"""
    columns: List[Tensor] = []
    n = jets.value.shape[0]
    for token in system.hidden_inputs:
        if token == "u":
            columns.append(jets.value)
            continue
        source = {"u_t": jets.u_t, "u_x": jets.u_x, "u_xx": jets.u_xx}[token]
        if source is None:
            raise ConfigurationError(f"{system.name}: hidden input '{token}' was requested but not computed")
        columns.append(source.reshape(n, -1))
    return torch.cat(columns, dim=1)


# ============================================================================
# PARAMETER RECORDS
# ============================================================================

class LvParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(default=1.3, gt=0)
    beta: float = Field(default=0.9, gt=0)
    gamma: float = Field(default=0.8, gt=0)
    delta: float = Field(default=1.8, gt=0)
    x0: float = Field(default=0.44249296, gt=0)
    y0: float = Field(default=4.6280594, gt=0)
    horizon: float = Field(default=3.0, gt=0)


class ApoptosisParams(BaseModel):
    """
    Rate constants of the three-species p53/Akt model

    The defaults are placeholders taken from the source model's published
    ranges, not from this package's data; override them from config when the
    source values are available.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    k0: float = Field(default=0.05, ge=0)
    k1: float = Field(default=1.0, ge=0)
    km1: float = Field(default=0.5, ge=0)
    k2: float = Field(default=0.5, ge=0)
    km3: float = Field(default=0.5, ge=0)
    kd: float = Field(default=0.1, ge=0)
    j1: float = Field(default=0.1, gt=0)
    jm1: float = Field(default=0.5, gt=0)
    j2: float = Field(default=0.5, gt=0)
    jm3: float = Field(default=0.5, gt=0)
    p53_0: float = Field(default=0.248, ge=0)
    akt_s_0: float = Field(default=0.0973, ge=0)
    akt_0: float = Field(default=0.0027, ge=0)
    horizon: float = Field(default=10.0, gt=0)
    externally_sourced: bool = True


class BurgersParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    nu: float = Field(default=1.0 / (1000.0 * math.pi), gt=0)
    x_min: float = -1.0
    x_max: float = 1.0
    horizon: float = Field(default=1.0, gt=0)


# ============================================================================
# BUILT-IN SYSTEMS
# ============================================================================

def _coupling(rows: Sequence[Sequence[float]]) -> Tensor:
    return torch.tensor(rows, dtype=DTYPE)


def lotka_volterra(params: Optional[LvParams] = None, hidden_mode: HiddenMode = "decoupled") -> DifferentialSystem:
    """Predator-prey: known growth/decay, hidden uptake terms -beta*x*y and gamma*x*y"""
    p = params or LvParams()

    def known(jets: StateJets) -> Tensor:
        x, y = jets.component(0), jets.component(1)
        return torch.stack([p.alpha * x, -p.delta * y], dim=1)

    def hidden(jets: StateJets) -> Tensor:
        xy = jets.component(0) * jets.component(1)
        return torch.stack([-p.beta * xy, p.gamma * xy], dim=1)

    return DifferentialSystem(
        name="lotka_volterra",
        domain=DomainSpec(spatial_bounds=(), horizon=p.horizon),
        state_names=("x", "y"),
        known_operator=known,
        hidden_operator=hidden,
        hidden_inputs=("u",),
        hidden_coupling=_coupling([[1.0, 0.0], [0.0, 1.0]]),
        hidden_names=("F1", "F2"),
        params=p,
        initial_state=(p.x0, p.y0),
        hidden_targets=({(1, 1): -p.beta}, {(1, 1): p.gamma}),
        hidden_mode=hidden_mode,
    )


def apoptosis_rates(p: ApoptosisParams, state: Tensor) -> Dict[str, Tensor]:
    p53, akt_s, akt = state[:, 0], state[:, 1], state[:, 2]
    return {
        "v0": torch.full_like(p53, p.k0),
        "v1": p.k1 * akt * (p.j1 + akt_s),
        "vm1": p.km1 * akt_s / (p.jm1 + akt_s),
        "v2": p.k2 * akt_s * p53 / (p.j2 + p53),
        "vm3": p.km3 * p53 * akt_s / (p.jm3 + akt_s),
    }


def cell_apoptosis(
    params: Optional[ApoptosisParams] = None,
    hidden_target: Literal["v1", "v2"] = "v1",
) -> DifferentialSystem:
    """
    p53 / active Akt / inactive Akt kinetics with one rate law hidden

    Hiding v1 couples it as (0, +1, -1); hiding v2 couples it as (-1, 0, 0).
    The Akt equation is always the exact negation of the Akt_s equation.
    """
    p = params or ApoptosisParams()
    if hidden_target not in ("v1", "v2"):
        raise ConfigurationError(f"Unknown apoptosis hidden target '{hidden_target}'")

    def known(jets: StateJets) -> Tensor:
        v = apoptosis_rates(p, jets.value)
        p53 = jets.component(0)
        if hidden_target == "v1":
            dp53 = v["v0"] - v["v2"] - p.kd * p53
            dakt_s = -v["vm1"] - v["vm3"]
        else:
            dp53 = v["v0"] - p.kd * p53
            dakt_s = v["v1"] - v["vm1"] - v["vm3"]
        return torch.stack([dp53, dakt_s, -dakt_s], dim=1)

    def hidden(jets: StateJets) -> Tensor:
        return apoptosis_rates(p, jets.value)[hidden_target].unsqueeze(1)

    coupling = [[0.0], [1.0], [-1.0]] if hidden_target == "v1" else [[-1.0], [0.0], [0.0]]
    if p.externally_sourced:
        logger.debug("⚠ Apoptosis rate constants are placeholder defaults")

    return DifferentialSystem(
        name="cell_apoptosis",
        domain=DomainSpec(spatial_bounds=(), horizon=p.horizon),
        state_names=("p53", "Akt_s", "Akt"),
        known_operator=known,
        hidden_operator=hidden,
        hidden_inputs=("u",),
        hidden_coupling=_coupling(coupling),
        hidden_names=(hidden_target,),
        params=p,
        initial_state=(p.p53_0, p.akt_s_0, p.akt_0),
        extras={"hidden_target": hidden_target},
    )


def viscous_burgers(nu: Optional[float] = None, params: Optional[BurgersParams] = None) -> DifferentialSystem:
    """u_t = -u*u_x + nu*u_xx on [-1,1]x[0,1], u(x,0) = -sin(pi*x), u(+-1,t) = 0"""
    if nu is not None and not nu > 0:
        raise ConfigurationError(f"Viscosity must be positive, got {nu}")
    p = params or BurgersParams()
    if nu is not None:
        p = p.model_copy(update={"nu": nu})

    def known(jets: StateJets) -> Tensor:
        return p.nu * jets.u_xx[:, :, 0]

    def hidden(jets: StateJets) -> Tensor:
        return -(jets.value * jets.u_x[:, :, 0])

    def initial(x: np.ndarray) -> np.ndarray:
        return (-np.sin(np.pi * np.asarray(x, dtype=np.float64))).reshape(-1, 1)

    return DifferentialSystem(
        name="viscous_burgers",
        domain=DomainSpec(spatial_bounds=((p.x_min, p.x_max),), horizon=p.horizon),
        state_names=("u",),
        known_operator=known,
        hidden_operator=hidden,
        hidden_inputs=("u", "u_x", "u_t"),
        hidden_coupling=_coupling([[1.0]]),
        hidden_names=("F",),
        params=p,
        boundary="dirichlet",
        initial_condition=initial,
        # features (u, u_x, u_t)
        hidden_targets=({(1, 1, 0): -1.0},),
    )


# ============================================================================
# CONFIG-DRIVEN CONSTRUCTION
# ============================================================================

class SystemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["lotka_volterra", "cell_apoptosis", "viscous_burgers"]
    hidden_mode: HiddenMode = "decoupled"
    hidden_target: Literal["v1", "v2"] = "v1"
    hidden_inputs: Optional[List[str]] = None
    lv: LvParams = Field(default_factory=LvParams)
    apoptosis: ApoptosisParams = Field(default_factory=ApoptosisParams)
    burgers: BurgersParams = Field(default_factory=BurgersParams)

    @field_validator("hidden_inputs")
    @classmethod
    def _known_tokens(cls, tokens):
        if tokens is not None:
            unknown = [t for t in tokens if t not in HIDDEN_INPUT_TOKENS]
            if unknown:
                raise ValueError(f"unknown hidden inputs {unknown}, expected a subset of {HIDDEN_INPUT_TOKENS}")
            if not tokens:
                raise ValueError("hidden_inputs must not be empty")
        return tokens


def build_system(config: SystemConfig) -> DifferentialSystem:
    if config.name == "lotka_volterra":
        system = lotka_volterra(config.lv, hidden_mode=config.hidden_mode)
    elif config.name == "cell_apoptosis":
        system = cell_apoptosis(config.apoptosis, hidden_target=config.hidden_target)
    else:
        system = viscous_burgers(params=config.burgers)

    if config.hidden_mode != system.hidden_mode:
        system = system.with_hidden_mode(config.hidden_mode)
    if config.hidden_inputs is not None and tuple(config.hidden_inputs) != system.hidden_inputs:
        targets = system.hidden_targets
        system = system.with_hidden_inputs(config.hidden_inputs)
        if targets and config.name == "viscous_burgers" and tuple(config.hidden_inputs) == ("u", "u_x"):
            system = _replace(system, hidden_targets=({(1, 1): -1.0},))
        logger.info(f"✓ {system.name}: hidden inputs overridden to {system.hidden_inputs}")
    return system
