"""
Experiment configuration
One YAML/JSON file per experiment; a run manifest is itself a loadable config.
"""

import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .dynamics import SystemConfig
from .errors import ConfigurationError
from .sampling import MeasurementSchedule
from .symreg import SymregConfig
from .trainer import TrainConfig
from .ude_baseline import UdeConfig

logger = logging.getLogger(__name__)

RunMode = Literal["generate", "train", "ude", "compare"]

# offsets from an experiment seed to the seed of each random stream
SEED_OFFSETS = {"noise": 0, "collocation": 1000, "train": 2000, "ude": 3000}


class CollocationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_interior: int = Field(default=1000, ge=1)
    n_boundary: int = Field(default=100, ge=0)


class ReferenceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: float = Field(default=1e-3, gt=0)
    grid_n: int = Field(default=300, ge=2)
    nx: int = Field(default=2048, ge=5)
    nt: int = Field(default=101, ge=2)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    mode: RunMode = "train"
    system: SystemConfig
    schedule: MeasurementSchedule = Field(default_factory=lambda: MeasurementSchedule(kind="count", count=10))
    noise: float = Field(default=0.0, ge=0)
    collocation: CollocationConfig = Field(default_factory=CollocationConfig)
    reference: ReferenceConfig = Field(default_factory=ReferenceConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    ude: Optional[UdeConfig] = None
    symreg: SymregConfig = Field(default_factory=SymregConfig)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    output_dir: Optional[Path] = None

    @model_validator(mode="after")
    def _mode_requirements(self):
        if self.mode in ("ude", "compare"):
            if self.ude is None:
                raise ValueError(f"mode '{self.mode}' requires a 'ude' section")
            if self.system.name == "viscous_burgers":
                raise ValueError("the UDE baseline only handles ODE systems")
        if self.system.name == "viscous_burgers" and self.collocation.n_boundary < 1:
            raise ValueError("viscous_burgers needs boundary collocation points (collocation.n_boundary >= 1)")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {self.seeds}")
        return self

    def derived_seeds(self, seed: int) -> Dict[str, int]:
        return {stream: seed + offset for stream, offset in SEED_OFFSETS.items()}


def _read_mapping(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise ConfigurationError(f"Config file {path} does not exist")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must hold a mapping at the top level")
    # run manifests carry the experiment under 'config'
    if "manifest_version" in data and "config" in data:
        data = data["config"]
    return data


def load_mapping(path: Union[str, Path]) -> Dict[str, Any]:
    return _read_mapping(Path(path))


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse and validate an experiment file (YAML, JSON, or a run manifest)"""
    config = ExperimentConfig.model_validate(load_mapping(path))
    logger.debug(f"✓ Loaded config '{config.name}' from {path}")
    return config


def set_dotted(data: Dict[str, Any], path: str, value: Any) -> Dict[str, Any]:
    """Set data['a']['b'] = value for path 'a.b', creating intermediate mappings"""
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        elif not isinstance(child, dict):
            raise ConfigurationError(f"Cannot descend into '{key}' of override path '{path}'")
        node = child
    node[keys[-1]] = value
    return data


def with_overrides(config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """A validated copy of `config` with dotted-path overrides applied"""
    data = copy.deepcopy(config.model_dump(mode="json", exclude_none=True))
    for path, value in overrides.items():
        set_dotted(data, path, value)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Overrides {overrides} give an invalid config: {e}") from e
