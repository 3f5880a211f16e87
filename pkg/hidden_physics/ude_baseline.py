"""
Universal-differential-equation baseline

du/dt = N_K(u) + C @ H(u), integrated with the shared unrolled RK4; H is fit
by differentiating the data misfit through the whole trajectory.
"""

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import Tensor
from tqdm import tqdm

from .autodiff import DTYPE, assign_grads, check_finite, param_grad
from .dynamics import DifferentialSystem, StateJets, hidden_features
from .errors import ConfigurationError, IntegrationError, NonFiniteError
from .sampling import Dataset, ReferenceSolution, TIME_TOLERANCE, integrate
from .trainer import HiddenModel, TrainReport, build_hidden, evaluate_hidden_mse

logger = logging.getLogger(__name__)


class UdeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden_layers: List[int] = Field(default_factory=lambda: [32, 32])
    step: float = Field(default=0.01, gt=0)
    learning_rate: float = Field(default=5e-3, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    iterations: int = Field(default=5000, ge=0)
    eval_grid: int = Field(default=300, ge=2)
    log_every: int = Field(default=500, ge=1)
    progress: bool = True
    seed: int = 0


def _check_inputs(system: DifferentialSystem) -> None:
    if not system.is_ode:
        raise ConfigurationError(f"{system.name}: the UDE baseline only handles ODE systems")
    if any(token != "u" for token in system.hidden_inputs):
        raise ConfigurationError(
            f"{system.name}: UDE hidden terms can only take the state as input, got {system.hidden_inputs}"
        )


def ude_solve(
    system: DifferentialSystem,
    hidden: Optional[HiddenModel],
    t_grid,
    u0,
    step: float,
) -> Tensor:
    """Trajectory (len(t_grid), m) of the known part plus the coupled network term"""
    _check_inputs(system)

    def rhs(state: Tensor) -> Tensor:
        known = system.known_rhs(state)
        if hidden is None:
            return known
        return known + hidden.contributions(hidden_features(StateJets.from_state(state), system))

    return integrate(rhs, torch.as_tensor(u0, dtype=DTYPE), torch.as_tensor(t_grid, dtype=DTYPE), step)


@dataclass
class UdeResult:
    hidden: HiddenModel
    report: TrainReport
    u0: Tensor
    config: UdeConfig

    def trajectory(self, system: DifferentialSystem) -> Dict[str, np.ndarray]:
        """Rollout from the t=0 record the network was trained from"""
        return ude_trajectory(system, self.hidden, self.u0, self.config)


def _alignment(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique ascending data times, the record->time index, and the t=0 record"""
    grid, index = np.unique(dataset.times, return_inverse=True)
    if abs(grid[0]) > TIME_TOLERANCE:
        raise ConfigurationError("UDE training needs a measurement at t=0 for the initial state")
    initial = dataset.states[np.flatnonzero(index == 0)[0]]
    return grid, index, initial


def ude_train(
    system: DifferentialSystem,
    dataset: Dataset,
    config: UdeConfig,
    reference: Optional[ReferenceSolution] = None,
    hidden: Optional[HiddenModel] = None,
) -> UdeResult:
    """Adam on the trajectory misfit at the measurement times"""
    _check_inputs(system)
    if len(dataset) == 0:
        raise ConfigurationError("UDE training needs at least one measurement")
    seed = config.seed
    torch.manual_seed(seed)
    hidden = hidden or build_hidden(system, config.hidden_layers, seed, mode="decoupled")

    grid, index, initial = _alignment(dataset)
    t_grid = torch.as_tensor(grid, dtype=DTYPE)
    u0 = torch.as_tensor(initial, dtype=DTYPE)
    targets = dataset.targets()
    record_index = torch.as_tensor(index, dtype=torch.long)

    networks = {"hidden": hidden}
    optimizer = torch.optim.Adam(hidden.parameters(), lr=config.learning_rate, betas=config.betas)
    trace: List[float] = []
    started = time.perf_counter()
    logger.info(f"[seed {seed}] UDE on {system.name}: {len(dataset)} records over {grid.size} times, step {config.step}")

    iterations = tqdm(range(config.iterations), desc=f"ude {system.name}", disable=not config.progress, leave=False)
    for iteration in iterations:
        optimizer.zero_grad(set_to_none=True)
        try:
            trajectory = ude_solve(system, hidden, t_grid, u0, config.step)
            per_record = ((trajectory[record_index] - targets) ** 2).sum(dim=1)
            check_finite("L_M", per_record)
            loss = per_record.mean()
            grads = param_grad(loss, networks)
        except NonFiniteError as e:
            logger.error(f"✗ [seed {seed}] UDE {e.at_iteration(iteration)}")
            raise e.at_iteration(iteration) from e
        except IntegrationError as e:
            logger.error(f"✗ [seed {seed}] UDE trajectory diverged at iteration {iteration}: {e}")
            raise
        assign_grads(networks, grads)
        optimizer.step()
        trace.append(float(loss.detach()))
        if (iteration + 1) % config.log_every == 0:
            logger.info(f"[seed {seed}] UDE it {iteration + 1}: L_M={trace[-1]:.3e}")

    hidden.net.step += config.iterations
    report = TrainReport(
        method="ude",
        system=system.name,
        iterations=config.iterations,
        loss_measurement=trace,
        loss_boundary=[0.0] * len(trace),
        loss_pinn=[0.0] * len(trace),
        seeds={"ude": seed},
        config=config.model_dump(mode="json"),
    )
    if reference is not None:
        report.hidden_mse = evaluate_hidden_mse(hidden, system, reference, config.eval_grid)
        report.surrogate_mse = ude_surrogate_mse(system, hidden, reference, u0, config)
    report.elapsed_seconds = time.perf_counter() - started

    hidden_mse = "n/a" if report.hidden_mse is None else f"{report.hidden_mse:.3e}"
    logger.info(f"✓ [seed {seed}] UDE {system.name} trained in {report.elapsed_seconds:.1f}s, hidden MSE {hidden_mse}")
    return UdeResult(hidden=hidden, report=report, u0=u0, config=config)


def ude_trajectory(
    system: DifferentialSystem,
    hidden: HiddenModel,
    u0: Tensor,
    config: UdeConfig,
) -> Dict[str, np.ndarray]:
    times = np.linspace(0.0, system.horizon, config.eval_grid)
    with torch.no_grad():
        states = ude_solve(system, hidden, times, u0, config.step).numpy()
    return {"t": times, "states": states}


def ude_surrogate_mse(
    system: DifferentialSystem,
    hidden: HiddenModel,
    reference: ReferenceSolution,
    u0: Tensor,
    config: UdeConfig,
) -> Optional[float]:
    """Integrated UDE trajectory against the reference on the evaluation grid"""
    try:
        solved = ude_trajectory(system, hidden, u0, config)
    except IntegrationError as e:
        logger.warning(f"⚠ UDE trajectory diverged during evaluation: {e}")
        return None
    true = np.stack([reference.state_at(t) for t in solved["t"]])
    return float(((solved["states"] - true) ** 2).sum(axis=1).mean())
