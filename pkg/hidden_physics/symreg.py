"""
Symbolic distillation of a trained hidden-term network

Sequential thresholded least squares over a monomial library, swept over
thresholds, with candidates ranked by non-domination in (complexity, error).
"""

import logging
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from .autodiff import DTYPE
from .dynamics import Monomials
from .errors import ConditioningError, ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.01, 0.05, 0.1, 0.2)
Exponents = Tuple[int, ...]


# ============================================================================
# BASIS LIBRARY
# ============================================================================

class BasisLibrary:
    """All monomials of total degree <= degree in the named inputs"""

    def __init__(self, names: Sequence[str], degree: int = 3, include_constant: bool = True):
        if not names:
            raise ConfigurationError("A basis library needs at least one input name")
        if degree < 1:
            raise ConfigurationError(f"Library degree must be >= 1, got {degree}")
        self.names = tuple(names)
        self.degree = degree
        self.include_constant = include_constant
        self.terms: List[Exponents] = []
        if include_constant:
            self.terms.append((0,) * len(self.names))
        for total in range(1, degree + 1):
            for combo in combinations_with_replacement(range(len(self.names)), total):
                self.terms.append(tuple(combo.count(i) for i in range(len(self.names))))

    def __len__(self) -> int:
        return len(self.terms)

    def describe(self, exponents: Exponents) -> str:
        factors = []
        for name, power in zip(self.names, exponents):
            if power == 1:
                factors.append(name)
            elif power > 1:
                factors.append(f"{name}^{power}")
        return "*".join(factors) if factors else "1"

    def descriptors(self) -> List[str]:
        return [self.describe(t) for t in self.terms]

    def evaluate(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != len(self.names):
            raise ConfigurationError(
                f"Library over {len(self.names)} inputs got samples of shape {features.shape}"
            )
        powers = np.asarray(self.terms, dtype=np.float64)
        return np.prod(features[:, None, :] ** powers[None, :, :], axis=2)


# ============================================================================
# MODELS
# ============================================================================

class SymbolicTerm(BaseModel):
    descriptor: str
    exponents: List[int]
    coefficient: float


class SymbolicModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    output: str = "F"
    terms: List[SymbolicTerm] = Field(default_factory=list)
    mse: float = Field(ge=0)
    complexity: int = Field(ge=0)
    recovered: bool = False
    threshold: Optional[float] = None
    ridge: float = 0.0
    n_samples: int = 0
    underdetermined: bool = False
    rank: Optional[int] = None

    @model_validator(mode="after")
    def _complexity_counts_terms(self):
        if self.complexity != len(self.terms):
            raise ValueError(f"complexity {self.complexity} != {len(self.terms)} active terms")
        return self

    def active_set(self) -> frozenset:
        return frozenset(tuple(t.exponents) for t in self.terms)

    def coefficient(self, descriptor: str) -> Optional[float]:
        for term in self.terms:
            if term.descriptor == descriptor:
                return term.coefficient
        return None

    def render(self, precision: int = 6) -> str:
        if not self.terms:
            return "0"
        pieces = []
        for term in self.terms:
            coef = f"{term.coefficient:.{precision}g}"
            pieces.append(coef if term.descriptor == "1" else f"{coef}*{term.descriptor}")
        return " + ".join(pieces).replace("+ -", "- ")

    def __str__(self) -> str:
        return f"{self.output} = {self.render()}"


def is_recovered(active: frozenset, target: Optional[Monomials]) -> bool:
    """True iff the active monomials are exactly the declared target set"""
    return target is not None and active == frozenset(target.keys())


# ============================================================================
# SAMPLE TABLES
# ============================================================================

@dataclass
class SampleTable:
    feature_names: Tuple[str, ...]
    features: np.ndarray
    output_names: Tuple[str, ...]
    outputs: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=list(self.feature_names))
        for i, name in enumerate(self.output_names):
            frame[name] = self.outputs[:, i]
        return frame


def evaluate_network_on_data(
    network: nn.Module,
    features: Union[np.ndarray, torch.Tensor],
    feature_names: Sequence[str],
    output_names: Optional[Sequence[str]] = None,
) -> SampleTable:
    """Regression targets for symbolic fitting: (state, network output) pairs"""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features.reshape(1, -1)
    width = getattr(network, "in_features", None)
    if width is not None and features.shape[1] != width:
        raise ConfigurationError(f"Network takes {width} inputs, samples have {features.shape[1]} columns")
    if len(feature_names) != features.shape[1]:
        raise ConfigurationError(f"{len(feature_names)} feature names for {features.shape[1]} columns")
    with torch.no_grad():
        outputs = network(torch.as_tensor(features, dtype=DTYPE)).numpy()
    if output_names is None:
        output_names = [f"F{i + 1}" for i in range(outputs.shape[1])]
    return SampleTable(
        feature_names=tuple(feature_names),
        features=features,
        output_names=tuple(output_names),
        outputs=outputs,
    )


# ============================================================================
# SPARSE REGRESSION
# ============================================================================

def _least_squares(theta: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    if ridge > 0:
        gram = theta.T @ theta + ridge * np.eye(theta.shape[1])
        return np.linalg.solve(gram, theta.T @ y)
    return np.linalg.lstsq(theta, y, rcond=None)[0]


def sparse_fit(
    features: np.ndarray,
    target: np.ndarray,
    library: BasisLibrary,
    threshold: float,
    ridge: float = 0.0,
    max_iter: int = 25,
    output: str = "F",
    target_terms: Optional[Monomials] = None,
) -> SymbolicModel:
    """
    Alternate least-squares fits with hard thresholding until the active set is fixed

    Without ridge regularization the design matrix must have full column rank.
    """
    theta = library.evaluate(features)
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    n, p = theta.shape
    if y.shape[0] != n:
        raise ConfigurationError(f"{n} samples but {y.shape[0]} targets")
    if ridge == 0 and np.linalg.matrix_rank(theta) < p:
        raise ConditioningError(
            f"Design matrix for '{output}' is rank-deficient ({n} samples, {p} terms); enable ridge regularization"
        )

    coef = _least_squares(theta, y, ridge)
    active = np.abs(coef) >= threshold
    for _ in range(max_iter):
        coef = np.where(active, coef, 0.0)
        if not active.any():
            break
        coef[active] = _least_squares(theta[:, active], y, ridge)
        updated = np.abs(coef) >= threshold
        if np.array_equal(updated, active):
            break
        active = updated & active
    coef = np.where(active, coef, 0.0)

    mse = float(np.mean((theta @ coef - y) ** 2))
    terms = [
        SymbolicTerm(descriptor=library.describe(library.terms[i]), exponents=list(library.terms[i]), coefficient=float(coef[i]))
        for i in np.flatnonzero(active)
    ]
    model = SymbolicModel(
        output=output,
        terms=terms,
        mse=mse,
        complexity=len(terms),
        threshold=threshold,
        ridge=ridge,
        n_samples=n,
        underdetermined=n < p,
    )
    model.recovered = is_recovered(model.active_set(), target_terms)
    return model


def threshold_sweep(
    features: np.ndarray,
    target: np.ndarray,
    library: BasisLibrary,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    ridge: float = 0.0,
    output: str = "F",
    target_terms: Optional[Monomials] = None,
) -> List[SymbolicModel]:
    return [
        sparse_fit(features, target, library, threshold, ridge=ridge, output=output, target_terms=target_terms)
        for threshold in thresholds
    ]


def _dominates(a: SymbolicModel, b: SymbolicModel) -> bool:
    no_worse = a.complexity <= b.complexity and a.mse <= b.mse
    better = a.complexity < b.complexity or a.mse < b.mse
    return no_worse and better


def pareto_rank(models: Sequence[SymbolicModel]) -> List[SymbolicModel]:
    """
    Non-dominated sort on (complexity, mse)

    Front 1 first; within a front, lower complexity then lower mse. Each
    returned copy carries its front number in `rank`.
    """
    if not models:
        raise ConfigurationError("Nothing to rank")
    remaining = list(models)
    ranked: List[SymbolicModel] = []
    front_number = 1
    while remaining:
        front = [m for m in remaining if not any(_dominates(o, m) for o in remaining if o is not m)]
        front.sort(key=lambda m: (m.complexity, m.mse))
        ranked.extend(m.model_copy(update={"rank": front_number}) for m in front)
        remaining = [m for m in remaining if all(m is not f for f in front)]
        front_number += 1
    return ranked


def select_model(ranked: Sequence[SymbolicModel], target_variance: float, r2_floor: float = 0.99) -> SymbolicModel:
    """
    Report one front-1 model: the simplest whose error explains at least
    r2_floor of the target variance, else the front's most accurate

    Front 1 usually holds several non-dominated models (one per complexity
    level reached by the sweep); the floor decides between them.
    """
    front = [m for m in ranked if m.rank == 1] or list(ranked)
    tolerance = (1.0 - r2_floor) * target_variance
    for model in sorted(front, key=lambda m: (m.complexity, m.mse)):
        if model.mse <= tolerance:
            return model
    return min(front, key=lambda m: (m.mse, m.complexity))


# ============================================================================
# DISTILLATION OF A SAMPLE TABLE
# ============================================================================

class SymregConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    degree: int = Field(default=3, ge=1)
    include_constant: bool = True
    thresholds: List[float] = Field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    ridge: float = Field(default=0.0, ge=0)
    fallback_ridge: float = Field(default=1e-6, gt=0)
    r2_floor: float = Field(default=0.99, ge=0, le=1)
    sources: List[Literal["training", "trajectory"]] = Field(default_factory=lambda: ["training", "trajectory"])
    enabled: bool = True


class SymbolicFit(BaseModel):
    """Selected model and ranked candidates for one hidden output"""

    output: str
    source: str
    selected: SymbolicModel
    candidates: List[SymbolicModel]


def distill(
    table: SampleTable,
    config: SymregConfig,
    targets: Optional[Sequence[Optional[Monomials]]] = None,
    source: str = "training",
) -> List[SymbolicFit]:
    """Threshold sweep, Pareto ranking and selection for every output column"""
    library = BasisLibrary(table.feature_names, config.degree, config.include_constant)
    ridge = config.ridge
    if ridge == 0 and np.linalg.matrix_rank(library.evaluate(table.features)) < len(library):
        ridge = config.fallback_ridge
        logger.warning(
            f"⚠ {source}: {len(table)} samples for {len(library)} library terms, "
            f"using ridge {ridge:g}"
        )

    fits: List[SymbolicFit] = []
    for i, name in enumerate(table.output_names):
        target_terms = targets[i] if targets else None
        y = table.outputs[:, i]
        candidates = threshold_sweep(
            table.features, y, library, config.thresholds, ridge=ridge, output=name, target_terms=target_terms
        )
        ranked = pareto_rank(candidates)
        selected = select_model(ranked, float(np.var(y)), config.r2_floor)
        logger.info(f"✓ [{source}] {selected} (mse {selected.mse:.2e}, recovered={selected.recovered})")
        fits.append(SymbolicFit(output=name, source=source, selected=selected, candidates=ranked))
    return fits
