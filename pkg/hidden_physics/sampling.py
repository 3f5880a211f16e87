"""
Synthetic data generation and collocation sampling

- RK4 integration (shared, differentiable; the UDE baseline reuses it)
- Finite-volume reference solver for viscous Burgers
- Multiplicative-mean noise model
- Latin hypercube collocation sets and measurement schedules
- CSV round-trips for datasets and collocation sets
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import solve_banded
from scipy.stats import qmc
from torch import Tensor

from .autodiff import DTYPE
from .dynamics import DifferentialSystem, StateJets
from .errors import ConfigurationError, IntegrationError

logger = logging.getLogger(__name__)

TIME_TOLERANCE = 1e-12
SeedLike = Union[int, np.random.Generator]


# ============================================================================
# DATA CONTAINERS
# ============================================================================

@dataclass
class ReferenceSolution:
    """
    Dense ground truth

    times: (nt,); x: (nx,) for a 1-D PDE, None for an ODE
    states: (nt, m) for an ODE, (nt, nx, m) for a PDE
    """

    times: np.ndarray
    states: np.ndarray
    x: Optional[np.ndarray] = None
    solver: Dict[str, object] = field(default_factory=dict)
    accuracy: Optional[float] = None

    @property
    def is_ode(self) -> bool:
        return self.x is None

    def state_at(self, t: float) -> np.ndarray:
        """State at time t, linear interpolation between stored times"""
        if t < self.times[0] - TIME_TOLERANCE or t > self.times[-1] + TIME_TOLERANCE:
            raise ConfigurationError(f"Time {t} outside the reference span [{self.times[0]}, {self.times[-1]}]")
        hit = np.flatnonzero(np.abs(self.times - t) <= TIME_TOLERANCE)
        if hit.size:
            return self.states[hit[0]].copy()
        upper = int(np.searchsorted(self.times, t))
        lower = upper - 1
        weight = (t - self.times[lower]) / (self.times[upper] - self.times[lower])
        return (1.0 - weight) * self.states[lower] + weight * self.states[upper]

    def to_frame(self, state_names: Sequence[str]) -> pd.DataFrame:
        if self.is_ode:
            frame = pd.DataFrame(self.states, columns=list(state_names))
            frame.insert(0, "t", self.times)
            return frame
        tt, xx = np.meshgrid(self.times, self.x, indexing="ij")
        frame = pd.DataFrame(self.states.reshape(-1, self.states.shape[-1]), columns=list(state_names))
        frame.insert(0, "x", xx.reshape(-1))
        frame.insert(0, "t", tt.reshape(-1))
        return frame


@dataclass
class Dataset:
    """Measurement records (t, x, u) with noise metadata"""

    times: np.ndarray
    spatial: np.ndarray
    states: np.ndarray
    state_names: Tuple[str, ...]
    spatial_names: Tuple[str, ...] = ()
    epsilon: float = 0.0
    seed: Optional[int] = None
    provenance: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        n = self.times.shape[0]
        self.spatial = np.asarray(self.spatial, dtype=np.float64).reshape(n, len(self.spatial_names))
        self.states = np.asarray(self.states, dtype=np.float64).reshape(n, len(self.state_names))

    def __len__(self) -> int:
        return self.times.shape[0]

    def points(self) -> Tensor:
        """Network inputs (n, d+1): spatial coordinates then time"""
        return torch.as_tensor(np.column_stack([self.spatial, self.times]), dtype=DTYPE)

    def targets(self) -> Tensor:
        return torch.as_tensor(self.states, dtype=DTYPE)

    def mean_magnitude(self) -> np.ndarray:
        return np.mean(np.abs(self.states), axis=0)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times})
        for i, name in enumerate(self.spatial_names):
            frame[name] = self.spatial[:, i]
        for i, name in enumerate(self.state_names):
            frame[name] = self.states[:, i]
        return frame

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    @classmethod
    def from_csv(
        cls,
        path: Union[str, Path],
        spatial_names: Sequence[str] = (),
        state_names: Optional[Sequence[str]] = None,
    ) -> "Dataset":
        frame = pd.read_csv(path)
        if "t" not in frame.columns:
            raise ConfigurationError(f"Dataset {path} has no 't' column")
        missing = [name for name in spatial_names if name not in frame.columns]
        if missing:
            raise ConfigurationError(f"Dataset {path} lacks spatial columns {missing}")
        if state_names is None:
            state_names = [c for c in frame.columns if c != "t" and c not in spatial_names]
        return cls(
            times=frame["t"].to_numpy(),
            spatial=frame[list(spatial_names)].to_numpy() if spatial_names else np.zeros((len(frame), 0)),
            states=frame[list(state_names)].to_numpy(),
            state_names=tuple(state_names),
            spatial_names=tuple(spatial_names),
            provenance={"source": str(path)},
        )


@dataclass
class CollocationSet:
    """Interior points X_P and boundary points X_B, rows (x..., t)"""

    interior: np.ndarray
    boundary: np.ndarray
    seed: Optional[int] = None
    spatial_names: Tuple[str, ...] = ()

    @property
    def n_interior(self) -> int:
        return self.interior.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary.shape[0]

    def interior_points(self) -> Tensor:
        return torch.as_tensor(self.interior, dtype=DTYPE)

    def boundary_points(self) -> Tensor:
        return torch.as_tensor(self.boundary, dtype=DTYPE)

    def to_frame(self) -> pd.DataFrame:
        columns = [*self.spatial_names, "t"]
        interior = pd.DataFrame(self.interior, columns=columns)
        interior.insert(0, "kind", "interior")
        boundary = pd.DataFrame(self.boundary, columns=columns)
        boundary.insert(0, "kind", "boundary")
        return pd.concat([interior, boundary], ignore_index=True)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path], spatial_names: Sequence[str] = ()) -> "CollocationSet":
        frame = pd.read_csv(path)
        columns = [*spatial_names, "t"]
        interior = frame.loc[frame["kind"] == "interior", columns].to_numpy(dtype=np.float64)
        boundary = frame.loc[frame["kind"] == "boundary", columns].to_numpy(dtype=np.float64)
        return cls(
            interior=interior.reshape(-1, len(columns)),
            boundary=boundary.reshape(-1, len(columns)),
            spatial_names=tuple(spatial_names),
        )


# ============================================================================
# RUNGE-KUTTA INTEGRATION
# ============================================================================

def integrate(
    rhs: Callable[[Tensor], Tensor],
    u0: Tensor,
    t_grid: Tensor,
    step: float,
) -> Tensor:
    """
    Classical RK4 from t_grid[0] through every node of t_grid

    Each interval is split into ceil(span/step) equal substeps so the solution
    lands exactly on the nodes. Operations stay on the autograd graph, so the
    trajectory is differentiable w.r.t. anything `rhs` closes over.
    Returns (len(t_grid), m).
    """
    if not step > 0:
        raise ConfigurationError(f"Integration step must be positive, got {step}")
    t_grid = torch.as_tensor(t_grid, dtype=DTYPE)
    if t_grid.ndim != 1 or t_grid.numel() == 0:
        raise ConfigurationError("Time grid must be a non-empty 1-D sequence")
    if t_grid.numel() > 1 and bool((t_grid[1:] < t_grid[:-1]).any()):
        raise ConfigurationError("Time grid must be ascending")

    state = torch.as_tensor(u0, dtype=DTYPE).reshape(1, -1)
    trajectory = [state]
    for k in range(1, t_grid.numel()):
        t0, t1 = float(t_grid[k - 1]), float(t_grid[k])
        span = t1 - t0
        if span <= 0:
            trajectory.append(state)
            continue
        substeps = max(1, math.ceil(span / step - 1e-9))
        h = span / substeps
        for i in range(substeps):
            k1 = rhs(state)
            k2 = rhs(state + 0.5 * h * k1)
            k3 = rhs(state + 0.5 * h * k2)
            k4 = rhs(state + h * k3)
            state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not bool(torch.isfinite(state.detach()).all()):
                raise IntegrationError(t0 + (i + 1) * h)
        trajectory.append(state)
    return torch.cat(trajectory, dim=0)


def _validate_time_grid(t_grid: np.ndarray, horizon: Optional[float] = None) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=np.float64).reshape(-1)
    if t_grid.size == 0 or abs(t_grid[0]) > TIME_TOLERANCE:
        raise ConfigurationError("Time grid must start at t=0")
    if np.any(np.diff(t_grid) < 0):
        raise ConfigurationError("Time grid must be ascending")
    if horizon is not None and t_grid[-1] > horizon + TIME_TOLERANCE:
        raise ConfigurationError(f"Time grid ends at {t_grid[-1]}, past the horizon {horizon}")
    return t_grid


def rk4_integrate(system: DifferentialSystem, t_grid: Sequence[float], step: float = 1e-3) -> ReferenceSolution:
    """Reference trajectory of an ODE system sampled at t_grid"""
    if not system.is_ode:
        raise ConfigurationError(f"{system.name} is not an ODE; use the PDE reference solver")
    t_grid = _validate_time_grid(t_grid)
    u0 = torch.tensor(system.initial_state, dtype=DTYPE)
    with torch.no_grad():
        trajectory = integrate(system.rhs, u0, torch.as_tensor(t_grid, dtype=DTYPE), step)
    return ReferenceSolution(
        times=t_grid,
        states=trajectory.numpy().copy(),
        solver={"method": "rk4", "step": step, "system": system.name},
    )


# ============================================================================
# BURGERS REFERENCE SOLVER
# ============================================================================

def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _advection_rate(u: np.ndarray, dx: float) -> np.ndarray:
    """-(f(u))_x for f = u^2/2: MUSCL-minmod reconstruction with Rusanov flux"""
    slopes = np.zeros_like(u)
    slopes[1:-1] = _minmod(u[1:-1] - u[:-2], u[2:] - u[1:-1])
    left = u[:-1] + 0.5 * slopes[:-1]
    right = u[1:] - 0.5 * slopes[1:]
    speed = np.maximum(np.abs(left), np.abs(right))
    flux = 0.25 * (left ** 2 + right ** 2) - 0.5 * speed * (right - left)
    rate = np.zeros_like(u)
    rate[1:-1] = -(flux[1:] - flux[:-1]) / dx
    return rate


def _diffuse(u: np.ndarray, r: float) -> np.ndarray:
    """Crank-Nicolson step on interior nodes with zero Dirichlet ends, r = nu*dt/dx^2"""
    interior = u[1:-1]
    n = interior.size
    explicit = (1.0 - r) * interior
    explicit[1:] += 0.5 * r * interior[:-1]
    explicit[:-1] += 0.5 * r * interior[1:]
    banded = np.empty((3, n))
    banded[0, :] = -0.5 * r
    banded[1, :] = 1.0 + r
    banded[2, :] = -0.5 * r
    out = np.zeros_like(u)
    out[1:-1] = solve_banded((1, 1), banded, explicit)
    return out


def _solve_burgers(
    nu: float,
    x: np.ndarray,
    u_init: np.ndarray,
    output_times: np.ndarray,
    cfl: float,
    dt_max: float,
) -> Tuple[np.ndarray, int]:
    dx = float(x[1] - x[0])
    u = u_init.astype(np.float64).copy()
    u[0] = u[-1] = 0.0
    frames = [u.copy()]
    t = 0.0
    steps = 0
    for target in output_times[1:]:
        while target - t > TIME_TOLERANCE:
            speed = float(np.max(np.abs(u)))
            dt = min(dt_max, cfl * dx / speed if speed > 0 else dt_max, target - t)
            r = nu * (0.5 * dt) / dx ** 2
            # Strang splitting: half diffusion, SSP-RK2 advection, half diffusion
            u = _diffuse(u, r)
            stage = u + dt * _advection_rate(u, dx)
            u = 0.5 * (u + stage + dt * _advection_rate(stage, dx))
            u = _diffuse(u, r)
            t += dt
            steps += 1
            if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > 1e6:
                raise IntegrationError(t, "Burgers solution blew up")
        frames.append(u.copy())
    return np.stack(frames), steps


def burgers_reference(
    nu: float,
    nx: int = 2048,
    nt: int = 101,
    horizon: float = 1.0,
    bounds: Tuple[float, float] = (-1.0, 1.0),
    output_times: Optional[Sequence[float]] = None,
    initial: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    cfl: float = 0.4,
    dt_max: float = 1e-3,
    estimate_accuracy: bool = True,
    shock_band: float = 0.05,
) -> ReferenceSolution:
    """
    Fine-grid solution of u_t = -u*u_x + nu*u_xx with u = 0 at both ends

    Conservative finite-volume advection, implicit diffusion, adaptive
    time step from the advective CFL. The accuracy estimate is the off-shock
    max-norm difference against a half-resolution solve.
    """
    if not nu > 0:
        raise ConfigurationError(f"Viscosity must be positive, got {nu}")
    if nx < 5:
        raise ConfigurationError(f"Reference grid needs at least 5 nodes, got {nx}")
    times = np.linspace(0.0, horizon, nt) if output_times is None else np.asarray(output_times, dtype=np.float64)
    times = np.union1d(_validate_time_grid(times, horizon), [0.0])
    initial = initial or (lambda x: -np.sin(np.pi * x))

    x = np.linspace(bounds[0], bounds[1], nx)
    u_init = np.asarray(initial(x), dtype=np.float64).reshape(-1)
    frames, steps = _solve_burgers(nu, x, u_init, times, cfl, dt_max)
    frames[0] = u_init

    accuracy = None
    if estimate_accuracy:
        coarse_x = np.linspace(bounds[0], bounds[1], nx // 2)
        coarse, _ = _solve_burgers(
            nu, coarse_x, np.asarray(initial(coarse_x), dtype=np.float64).reshape(-1), times, cfl, dt_max
        )
        off_shock = np.abs(x) > shock_band
        accuracy = max(
            float(np.max(np.abs(np.interp(x, coarse_x, coarse[k]) - frames[k])[off_shock]))
            for k in range(times.size)
        )
        logger.info(f"✓ Burgers reference nx={nx}: {steps} steps, off-shock refinement delta {accuracy:.2e}")

    return ReferenceSolution(
        times=times,
        states=frames[:, :, None],
        x=x,
        solver={"method": "muscl-rusanov+crank-nicolson", "nx": nx, "nu": nu, "cfl": cfl, "steps": steps},
        accuracy=accuracy,
    )


def reference_for(
    system: DifferentialSystem,
    times: Sequence[float] = (),
    grid_n: int = 300,
    step: float = 1e-3,
    nx: int = 2048,
    nt: int = 101,
) -> ReferenceSolution:
    """Reference solution whose stored times include `times` and an even grid"""
    if system.is_ode:
        grid = np.union1d(np.linspace(0.0, system.horizon, grid_n), np.asarray(times, dtype=np.float64))
        return rk4_integrate(system, grid, step=step)
    lo, hi = system.domain.spatial_bounds[0]
    grid = np.union1d(np.linspace(0.0, system.horizon, nt), np.asarray(times, dtype=np.float64))
    return burgers_reference(
        system.params.nu,
        nx=nx,
        horizon=system.horizon,
        bounds=(lo, hi),
        output_times=grid,
        initial=lambda x: system.initial_condition(x)[:, 0],
    )


# ============================================================================
# NOISE, LATIN HYPERCUBE, SCHEDULES
# ============================================================================

def add_noise(dataset: Dataset, epsilon: float, seed: int) -> Dataset:
    """u + epsilon * mean(|u|) * N(0,1), per state component"""
    if len(dataset) == 0:
        raise ConfigurationError("Cannot add noise to an empty dataset")
    if epsilon == 0:
        return dataset
    rng = np.random.default_rng(seed)
    scale = epsilon * dataset.mean_magnitude()
    noisy = dataset.states + scale * rng.standard_normal(dataset.states.shape)
    return Dataset(
        times=dataset.times.copy(),
        spatial=dataset.spatial.copy(),
        states=noisy,
        state_names=dataset.state_names,
        spatial_names=dataset.spatial_names,
        epsilon=epsilon,
        seed=seed,
        provenance={**dataset.provenance, "noise": "multiplicative-mean"},
    )


def latin_hypercube(n: int, box: Sequence[Tuple[float, float]], seed: SeedLike) -> np.ndarray:
    """n stratified points in the product box [lo, hi), one per stratum per coordinate"""
    if n < 1:
        raise ConfigurationError(f"Latin hypercube needs n >= 1, got {n}")
    if not box or any(not lo < hi for lo, hi in box):
        raise ConfigurationError(f"Latin hypercube box must be non-empty intervals, got {box}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sampler = qmc.LatinHypercube(d=len(box), rng=rng)
    unit = sampler.random(n)
    lo = np.array([b[0] for b in box], dtype=np.float64)
    hi = np.array([b[1] for b in box], dtype=np.float64)
    return qmc.scale(unit, lo, hi)


def build_collocation(system: DifferentialSystem, n_interior: int, n_boundary: int, seed: int) -> CollocationSet:
    """
    X_P inside the domain with t in (0, T]; X_B on the spatial boundary

    Boundary points are stratified over the remaining coordinates and cycle
    through the faces lo/hi of each spatial dimension in turn.
    """
    rng = np.random.default_rng(seed)
    horizon = system.horizon
    d = system.domain.spatial_dim
    box = [*system.domain.spatial_bounds, (0.0, horizon)]

    interior = latin_hypercube(n_interior, box, rng)
    # [0, T) -> (0, T]
    interior[:, -1] = horizon - interior[:, -1]

    if d == 0:
        boundary = np.zeros((0, 1))
    elif n_boundary < 1:
        raise ConfigurationError(f"{system.name} needs boundary collocation points, got n_B={n_boundary}")
    else:
        boundary = latin_hypercube(n_boundary, box, rng)
        boundary[:, -1] = horizon - boundary[:, -1]
        for j in range(n_boundary):
            axis = (j // 2) % d
            lo, hi = system.domain.spatial_bounds[axis]
            boundary[j, axis] = lo if j % 2 == 0 else hi

    return CollocationSet(
        interior=interior,
        boundary=boundary,
        seed=seed,
        spatial_names=system.domain.spatial_names,
    )


class MeasurementSchedule(BaseModel):
    """
    When (and for a PDE, where) measurements are taken

    count:   n equispaced times on [0, T] including t=0; n=1 is the initial condition only
    spacing: times k*spacing for k = 0, 1, ... up to T
    times:   an explicit list
    """

    model_config = ConfigDict(extra="forbid")

    kind: Literal["count", "spacing", "times"] = "count"
    count: Optional[int] = Field(default=None, ge=1)
    spacing: Optional[float] = Field(default=None, gt=0)
    times: Optional[List[float]] = None
    spatial_points: int = Field(default=256, ge=2)

    @model_validator(mode="after")
    def _matching_field(self):
        needed = {"count": self.count, "spacing": self.spacing, "times": self.times}[self.kind]
        if needed is None or (self.kind == "times" and not self.times):
            raise ValueError(f"schedule kind '{self.kind}' requires the '{self.kind}' field")
        return self

    def times_for(self, horizon: float) -> np.ndarray:
        if self.kind == "count":
            times = np.array([0.0]) if self.count == 1 else np.linspace(0.0, horizon, self.count)
        elif self.kind == "spacing":
            intervals = math.floor(horizon / self.spacing + 1e-9)
            times = np.minimum(np.arange(intervals + 1) * self.spacing, horizon)
        else:
            times = np.asarray(sorted(self.times), dtype=np.float64)
        if np.any(times < -TIME_TOLERANCE) or np.any(times > horizon + TIME_TOLERANCE):
            raise ConfigurationError(f"Scheduled times must lie in [0, {horizon}], got {times.tolist()}")
        return np.clip(times, 0.0, horizon)


def sample_measurements(
    reference: ReferenceSolution,
    schedule: MeasurementSchedule,
    system: DifferentialSystem,
) -> Dataset:
    """Noiseless measurements extracted from the reference at the scheduled points"""
    times = schedule.times_for(system.horizon)
    slices = [reference.state_at(t) for t in times]
    provenance = {"system": system.name, "schedule": schedule.model_dump(), **reference.solver}

    if reference.is_ode:
        return Dataset(
            times=times,
            spatial=np.zeros((times.size, 0)),
            states=np.stack(slices),
            state_names=system.state_names,
            provenance=provenance,
        )

    nx = reference.x.size
    picks = np.unique(np.round(np.linspace(0, nx - 1, min(schedule.spatial_points, nx))).astype(int))
    x = reference.x[picks]
    return Dataset(
        times=np.repeat(times, picks.size),
        spatial=np.tile(x, times.size).reshape(-1, 1),
        states=np.concatenate([s[picks] for s in slices]),
        state_names=system.state_names,
        spatial_names=system.domain.spatial_names,
        provenance=provenance,
    )


# ============================================================================
# EVALUATION STATES
# ============================================================================

@dataclass
class EvaluationStates:
    """True states and derivatives on an evaluation grid, rows aligned with `points`"""

    points: np.ndarray
    jets: StateJets

    def __len__(self) -> int:
        return self.points.shape[0]


def evaluation_states(
    system: DifferentialSystem,
    reference: ReferenceSolution,
    grid_n: int = 300,
    spatial_n: int = 256,
    exclude_band: Optional[float] = None,
) -> EvaluationStates:
    """
    States sampled along the reference for scoring learned terms

    ODE: grid_n times uniform on [0, T], u_t from the full right-hand side.
    PDE: every stored time slice on spatial_n nodes, spatial derivatives by
    central differences on the full grid, u_t = N_K + F_true.
    """
    if reference.is_ode:
        times = np.linspace(0.0, system.horizon, grid_n)
        states = np.stack([reference.state_at(t) for t in times])
        value = torch.as_tensor(states, dtype=DTYPE)
        jets = StateJets(value=value, u_t=system.rhs(value))
        return EvaluationStates(points=times.reshape(-1, 1), jets=jets)

    x = reference.x
    u = reference.states[..., 0]
    u_x = np.gradient(u, x, axis=1)
    u_xx = np.gradient(u_x, x, axis=1)
    picks = np.unique(np.round(np.linspace(0, x.size - 1, min(spatial_n, x.size))).astype(int))
    if exclude_band is not None:
        picks = picks[np.abs(x[picks]) > exclude_band]

    tt, xx = np.meshgrid(reference.times, x[picks], indexing="ij")

    def to_tensor(field_values: np.ndarray) -> Tensor:
        return torch.as_tensor(field_values[:, picks].reshape(-1, 1), dtype=DTYPE)

    jets = StateJets(
        value=to_tensor(u),
        u_x=to_tensor(u_x).unsqueeze(-1),
        u_xx=to_tensor(u_xx).unsqueeze(-1),
    )
    jets.u_t = system.known_operator(jets) + system.couple(system.true_hidden(jets))
    return EvaluationStates(points=np.column_stack([xx.reshape(-1), tt.reshape(-1)]), jets=jets)
