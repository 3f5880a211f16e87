"""
Physics-informed training of a surrogate U and a hidden-term network F

Total loss  L = w_M * L_M + w_B * L_B + w_P * L_P
    L_M  data misfit of U at the measurement records
    L_B  boundary residual of U (PDE only), optionally corrected by a learned B
    L_P  residual N_K[U] + C @ F(inputs) - U_t at the interior collocation points
"""

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import Tensor, nn
from tqdm import tqdm

from .autodiff import DTYPE, assign_grads, check_finite, jet_eval, param_grad
from .dynamics import DifferentialSystem, HiddenMode, StateJets, hidden_feature_dim, hidden_feature_names, hidden_features
from .errors import ConfigurationError, NonFiniteError
from .neural import Mlp, init_glorot
from .sampling import CollocationSet, Dataset, ReferenceSolution, evaluation_states

logger = logging.getLogger(__name__)


# ============================================================================
# CONFIGURATION AND REPORT
# ============================================================================

class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    measurement: float = Field(default=1.0, ge=0)
    boundary: float = Field(default=1.0, ge=0)
    pinn: float = Field(default=1.0, ge=0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(default=1e-3, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    iterations: int = Field(default=30000, ge=1)
    weights: LossWeights = Field(default_factory=LossWeights)
    surrogate_layers: List[int] = Field(default_factory=lambda: [32, 32, 32])
    hidden_layers: List[int] = Field(default_factory=lambda: [32, 32])
    boundary_layers: List[int] = Field(default_factory=lambda: [16, 16])
    hidden_mode: Optional[HiddenMode] = None
    learn_boundary: bool = False
    freeze_hidden: bool = False
    scale_outputs: bool = False
    eval_grid: int = Field(default=300, ge=2)
    eval_spatial: int = Field(default=256, ge=2)
    exclude_band: Optional[float] = Field(default=None, ge=0)
    log_every: int = Field(default=1000, ge=1)
    progress: bool = True
    seed: int = 0


class TrainReport(BaseModel):
    """Loss traces and final scores of one training run (PINN or UDE)"""

    method: Literal["pinn", "ude"] = "pinn"
    system: str
    iterations: int
    loss_measurement: List[float] = Field(default_factory=list)
    loss_boundary: List[float] = Field(default_factory=list)
    loss_pinn: List[float] = Field(default_factory=list)
    hidden_mse: Optional[float] = Field(default=None, ge=0)
    surrogate_mse: Optional[float] = Field(default=None, ge=0)
    elapsed_seconds: float = 0.0
    seeds: Dict[str, int] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)
    phi: List[float] = Field(default_factory=list)

    def traces_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "iteration": np.arange(len(self.loss_measurement)),
            "L_M": self.loss_measurement,
            "L_B": self.loss_boundary,
            "L_P": self.loss_pinn,
        })

    def write_traces(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.traces_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(self.model_dump_json(indent=2))
        return path

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "TrainReport":
        return cls.model_validate(json.loads(Path(path).read_text()))


# ============================================================================
# NETWORKS
# ============================================================================

class Surrogate(nn.Module):
    """U(x, t) with an optional fixed per-component output scale"""

    def __init__(self, net: Mlp, output_scale: Optional[Tensor] = None):
        super().__init__()
        self.net = net
        scale = torch.ones(net.out_features, dtype=DTYPE) if output_scale is None else output_scale.to(DTYPE)
        self.register_buffer("output_scale", scale)

    @property
    def in_features(self) -> int:
        return self.net.in_features

    def forward(self, points: Tensor) -> Tensor:
        return self.net(points) * self.output_scale


class HiddenModel(nn.Module):
    """
    Hidden-term network F with its coupling into the state equations

    decoupled:      the network has k outputs
    shared_scaled:  one output g and learned scales phi, outputs (-phi_1 g, ..., -phi_{k-1} g, g)
    """

    def __init__(self, net: Mlp, coupling: Tensor, mode: HiddenMode = "decoupled"):
        super().__init__()
        k = coupling.shape[1]
        expected = 1 if mode == "shared_scaled" else k
        if net.out_features != expected:
            raise ConfigurationError(f"Hidden network has {net.out_features} outputs, {mode} mode needs {expected}")
        self.net = net
        self.mode = mode
        self.register_buffer("coupling", coupling.to(DTYPE))
        self.phi = nn.Parameter(torch.ones(k - 1, dtype=DTYPE)) if mode == "shared_scaled" else None

    @property
    def in_features(self) -> int:
        return self.net.in_features

    @property
    def hidden_dim(self) -> int:
        return self.coupling.shape[1]

    def hidden(self, features: Tensor) -> Tensor:
        out = self.net(features)
        if self.mode == "shared_scaled":
            return torch.cat([-self.phi * out, out], dim=1)
        return out

    def forward(self, features: Tensor) -> Tensor:
        return self.hidden(features)

    def contributions(self, features: Tensor) -> Tensor:
        return self.hidden(features) @ self.coupling.T

    def phi_values(self) -> List[float]:
        return [] if self.phi is None else self.phi.detach().tolist()


def build_surrogate(system: DifferentialSystem, layers: List[int], seed: int, scale: Optional[np.ndarray] = None) -> Surrogate:
    net = init_glorot([system.domain.input_dim, *layers, system.state_dim], seed)
    net.extras.update({"role": "surrogate", "system": system.name})
    output_scale = None
    if scale is not None:
        scale = np.where(np.asarray(scale) > 0, scale, 1.0)
        output_scale = torch.as_tensor(scale, dtype=DTYPE)
    return Surrogate(net, output_scale)


def build_hidden(system: DifferentialSystem, layers: List[int], seed: int, mode: Optional[HiddenMode] = None) -> HiddenModel:
    mode = mode or system.hidden_mode
    outputs = 1 if mode == "shared_scaled" else system.hidden_dim
    net = init_glorot([hidden_feature_dim(system), *layers, outputs], seed)
    net.extras.update({
        "role": "hidden",
        "system": system.name,
        "mode": mode,
        "inputs": hidden_feature_names(system),
        "outputs": list(system.hidden_names),
    })
    return HiddenModel(net, system.hidden_coupling, mode)


# ============================================================================
# LOSS TERMS
# ============================================================================

def state_jets(surrogate: nn.Module, points: Tensor, system: DifferentialSystem) -> StateJets:
    """U and its derivatives at points (n, d+1); the last coordinate is time"""
    d = system.domain.spatial_dim
    jet = jet_eval(surrogate, points, order=1 if system.is_ode else 2)
    u_x = jet.d1[..., :d] if d else None
    u_xx = torch.stack([jet.d2[..., i, i] for i in range(d)], dim=-1) if d else None
    return StateJets(value=jet.value, u_t=jet.d1[..., d], u_x=u_x, u_xx=u_xx)


def _mean_squared(node: str, residual: Tensor) -> Tensor:
    per_point = (residual ** 2).sum(dim=1)
    check_finite(node, per_point)
    return per_point.mean()


def loss_measurement(surrogate: nn.Module, dataset: Dataset) -> Tensor:
    if len(dataset) == 0:
        raise ConfigurationError("Measurement loss needs at least one record")
    return _mean_squared("L_M", surrogate(dataset.points()) - dataset.targets())


def loss_boundary(
    surrogate: nn.Module,
    boundary_points: Tensor,
    system: DifferentialSystem,
    boundary_net: Optional[nn.Module] = None,
) -> Tensor:
    """Mean of (U - g + B(U))^2 over X_B for a known Dirichlet value g"""
    if system.is_ode:
        raise ConfigurationError(f"{system.name} is an ODE and has no boundary loss")
    if boundary_points.shape[0] == 0:
        return torch.zeros((), dtype=DTYPE)
    value = surrogate(boundary_points)
    residual = value - system.boundary_value
    if boundary_net is not None:
        residual = residual + boundary_net(value)
    return _mean_squared("L_B", residual)


def loss_pinn(
    surrogate: nn.Module,
    hidden: HiddenModel,
    interior_points: Tensor,
    system: DifferentialSystem,
) -> Tensor:
    if interior_points.shape[0] == 0:
        raise ConfigurationError("Physics loss needs at least one collocation point")
    jets = state_jets(surrogate, interior_points, system)
    features = hidden_features(jets, system)
    if features.shape[1] != hidden.in_features:
        raise ConfigurationError(
            f"Hidden network takes {hidden.in_features} inputs, {system.name} provides {features.shape[1]}"
        )
    residual = system.known_operator(jets) + hidden.contributions(features) - jets.u_t
    return _mean_squared("L_P", residual)


# ============================================================================
# EVALUATION
# ============================================================================

@torch.no_grad()
def _hidden_pair(hidden: HiddenModel, system: DifferentialSystem, states) -> Tuple[Tensor, Tensor, Tensor]:
    features = hidden_features(states.jets, system)
    return features, hidden.hidden(features), system.true_hidden(states.jets)


def evaluate_hidden_mse(
    hidden: HiddenModel,
    system: DifferentialSystem,
    reference: ReferenceSolution,
    grid_n: int = 300,
    spatial_n: int = 256,
    exclude_band: Optional[float] = None,
) -> float:
    """Mean over evaluation states of the squared error of F against F_true, summed over outputs"""
    states = evaluation_states(system, reference, grid_n, spatial_n, exclude_band)
    _, predicted, true = _hidden_pair(hidden, system, states)
    return float(((predicted - true) ** 2).sum(dim=1).mean())


def evaluate_surrogate_mse(
    surrogate: nn.Module,
    system: DifferentialSystem,
    reference: ReferenceSolution,
    grid_n: int = 300,
    spatial_n: int = 256,
    exclude_band: Optional[float] = None,
) -> float:
    states = evaluation_states(system, reference, grid_n, spatial_n, exclude_band)
    with torch.no_grad():
        predicted = surrogate(torch.as_tensor(states.points, dtype=DTYPE))
    return float(((predicted - states.jets.value) ** 2).sum(dim=1).mean())


def hidden_evaluation_table(
    hidden: HiddenModel,
    system: DifferentialSystem,
    reference: ReferenceSolution,
    grid_n: int = 300,
    spatial_n: int = 256,
    exclude_band: Optional[float] = None,
) -> pd.DataFrame:
    """Feature columns with pred_<name> / true_<name> per hidden output"""
    states = evaluation_states(system, reference, grid_n, spatial_n, exclude_band)
    features, predicted, true = _hidden_pair(hidden, system, states)
    frame = pd.DataFrame(features.numpy(), columns=hidden_feature_names(system))
    for i, name in enumerate(system.hidden_names):
        frame[f"pred_{name}"] = predicted[:, i].numpy()
        frame[f"true_{name}"] = true[:, i].numpy()
    return frame


# ============================================================================
# TRAINING
# ============================================================================

@dataclass
class TrainResult:
    surrogate: Surrogate
    hidden: HiddenModel
    boundary: Optional[Mlp]
    report: TrainReport

    @property
    def phi(self) -> List[float]:
        return self.hidden.phi_values()


def total_loss(
    surrogate: Surrogate,
    hidden: HiddenModel,
    boundary: Optional[Mlp],
    system: DifferentialSystem,
    dataset: Dataset,
    collocation: CollocationSet,
    weights: LossWeights,
) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    """(total, L_M, L_B, L_P); L_B is exactly zero for an ODE"""
    l_m = loss_measurement(surrogate, dataset)
    if system.is_ode:
        l_b = torch.zeros((), dtype=DTYPE)
    else:
        l_b = loss_boundary(surrogate, collocation.boundary_points(), system, boundary)
    l_p = loss_pinn(surrogate, hidden, collocation.interior_points(), system)
    total = weights.measurement * l_m + weights.boundary * l_b + weights.pinn * l_p
    return total, l_m, l_b, l_p


def train(
    system: DifferentialSystem,
    dataset: Dataset,
    collocation: CollocationSet,
    config: TrainConfig,
    reference: Optional[ReferenceSolution] = None,
    surrogate: Optional[Surrogate] = None,
    hidden: Optional[HiddenModel] = None,
) -> TrainResult:
    """
    Joint Adam optimization of U, F (and B, phi when enabled), full batch

    Networks not supplied are Glorot-initialized from config.seed (U),
    config.seed+1 (F) and config.seed+2 (B).
    """
    if dataset.state_names != system.state_names:
        raise ConfigurationError(f"Dataset states {dataset.state_names} do not match {system.state_names}")
    mode = config.hidden_mode or system.hidden_mode
    seed = config.seed
    torch.manual_seed(seed)

    scale = dataset.mean_magnitude() if config.scale_outputs else None
    surrogate = surrogate or build_surrogate(system, config.surrogate_layers, seed, scale)
    hidden = hidden or build_hidden(system, config.hidden_layers, seed + 1, mode)
    boundary = None
    if config.learn_boundary:
        if system.is_ode:
            raise ConfigurationError(f"{system.name} is an ODE; there is no boundary operator to learn")
        boundary = init_glorot([system.state_dim, *config.boundary_layers, system.state_dim], seed + 2)
        boundary.extras.update({"role": "boundary", "system": system.name})

    if config.freeze_hidden:
        with torch.no_grad():
            for p in hidden.parameters():
                p.zero_()
        hidden.requires_grad_(False)

    networks = {"surrogate": surrogate, "hidden": hidden, "boundary": boundary}
    params = [p for net in networks.values() if net is not None for p in net.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.learning_rate, betas=config.betas)

    traces: Dict[str, List[float]] = {"L_M": [], "L_B": [], "L_P": []}
    started = time.perf_counter()
    logger.info(
        f"[seed {seed}] Training {system.name}: {len(dataset)} records, "
        f"{collocation.n_interior} interior / {collocation.n_boundary} boundary points, mode={mode}"
    )

    iterations = tqdm(range(config.iterations), desc=f"pinn {system.name}", disable=not config.progress, leave=False)
    for iteration in iterations:
        optimizer.zero_grad(set_to_none=True)
        try:
            total, l_m, l_b, l_p = total_loss(surrogate, hidden, boundary, system, dataset, collocation, config.weights)
            grads = param_grad(total, networks)
        except NonFiniteError as e:
            logger.error(f"✗ [seed {seed}] {e.at_iteration(iteration)}")
            raise e.at_iteration(iteration) from e
        assign_grads(networks, grads)
        optimizer.step()

        traces["L_M"].append(float(l_m.detach()))
        traces["L_B"].append(float(l_b.detach()))
        traces["L_P"].append(float(l_p.detach()))
        if (iteration + 1) % config.log_every == 0:
            logger.info(
                f"[seed {seed}] it {iteration + 1}: L_M={traces['L_M'][-1]:.3e} "
                f"L_B={traces['L_B'][-1]:.3e} L_P={traces['L_P'][-1]:.3e}"
            )

    for net in (surrogate.net, hidden.net, boundary):
        if net is not None:
            net.step += config.iterations

    report = TrainReport(
        method="pinn",
        system=system.name,
        iterations=config.iterations,
        loss_measurement=traces["L_M"],
        loss_boundary=traces["L_B"],
        loss_pinn=traces["L_P"],
        seeds={"train": seed},
        config=config.model_dump(mode="json"),
        phi=hidden.phi_values(),
    )
    if reference is not None:
        band = config.exclude_band
        report.hidden_mse = evaluate_hidden_mse(hidden, system, reference, config.eval_grid, config.eval_spatial, band)
        report.surrogate_mse = evaluate_surrogate_mse(surrogate, system, reference, config.eval_grid, config.eval_spatial, band)
    report.elapsed_seconds = time.perf_counter() - started

    hidden_mse = "n/a" if report.hidden_mse is None else f"{report.hidden_mse:.3e}"
    logger.info(f"✓ [seed {seed}] {system.name} trained in {report.elapsed_seconds:.1f}s, hidden MSE {hidden_mse}")
    return TrainResult(surrogate=surrogate, hidden=hidden, boundary=boundary, report=report)
