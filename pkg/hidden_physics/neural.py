"""
Multilayer perceptrons for the surrogate (U), hidden-term (F) and boundary (B) networks
Glorot initialization, forward pass, and versioned safetensors checkpoints
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import torch
from pydantic import BaseModel, Field, ValidationError
from safetensors import SafetensorError, safe_open
from safetensors.torch import load_file, save_file
from torch import Tensor, nn

from .autodiff import DTYPE
from .errors import CheckpointError, ConfigurationError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class Mlp(nn.Module):
    """
    Feed-forward network: affine -> tanh repeated, final layer affine

    `seed` and `step` travel with the weights into checkpoints; `extras`
    holds small JSON-able annotations (role, system name, input names).
    """

    def __init__(self, widths: Sequence[int], seed: int = 0):
        super().__init__()
        widths = _validate_widths(widths)
        self.widths: List[int] = widths
        self.seed = seed
        self.step = 0
        self.extras: Dict[str, Any] = {}
        self.layers = nn.ModuleList(
            nn.Linear(fan_in, fan_out, dtype=DTYPE) for fan_in, fan_out in zip(widths[:-1], widths[1:])
        )

    @property
    def in_features(self) -> int:
        return self.widths[0]

    @property
    def out_features(self) -> int:
        return self.widths[-1]

    def forward(self, inputs: Tensor) -> Tensor:
        if inputs.shape[-1] != self.in_features:
            raise ConfigurationError(
                f"Mlp expects input width {self.in_features}, got {inputs.shape[-1]}"
            )
        hidden = inputs
        for layer in self.layers[:-1]:
            hidden = torch.tanh(layer(hidden))
        return self.layers[-1](hidden)

    def flat_parameters(self) -> Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])

    def extra_repr(self) -> str:
        return f"widths={self.widths}, seed={self.seed}, step={self.step}"


def _validate_widths(widths: Sequence[int]) -> List[int]:
    widths = [int(w) for w in widths] if widths is not None else []
    if len(widths) < 2:
        raise ConfigurationError(f"An Mlp needs at least input and output widths, got {widths}")
    if any(w <= 0 for w in widths):
        raise ConfigurationError(f"Layer widths must be positive, got {widths}")
    return widths


def init_glorot(widths: Sequence[int], seed: int) -> Mlp:
    """Weights uniform in +-sqrt(6/(fan_in+fan_out)), zero biases, deterministic per seed"""
    net = Mlp(widths, seed=seed)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in net.layers:
            nn.init.xavier_uniform_(layer.weight, generator=generator)
            nn.init.zeros_(layer.bias)
    return net


def zero_network(widths: Sequence[int]) -> Mlp:
    net = Mlp(widths)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    return net


# ============================================================================
# CHECKPOINTS
# ============================================================================

class MlpCheckpoint(BaseModel):
    """Metadata stored in the safetensors header next to the parameter tensors"""

    format_version: int = Field(default=CHECKPOINT_FORMAT_VERSION)
    widths: List[int]
    seed: int
    step: int = 0
    extras: Dict[str, Any] = Field(default_factory=dict)

    def to_metadata(self) -> Dict[str, str]:
        return {
            "format_version": str(self.format_version),
            "widths": json.dumps(self.widths),
            "seed": str(self.seed),
            "step": str(self.step),
            "extras": json.dumps(self.extras, sort_keys=True),
        }

    @classmethod
    def from_metadata(cls, metadata: Optional[Dict[str, str]]) -> "MlpCheckpoint":
        if not metadata or "format_version" not in metadata:
            raise CheckpointError("Checkpoint has no version stamp")
        try:
            return cls(
                format_version=int(metadata["format_version"]),
                widths=json.loads(metadata["widths"]),
                seed=int(metadata["seed"]),
                step=int(metadata.get("step", "0")),
                extras=json.loads(metadata.get("extras", "{}")),
            )
        except (KeyError, ValueError, ValidationError) as e:
            raise CheckpointError(f"Malformed checkpoint metadata: {e}") from e


def save_checkpoint(
    net: Mlp,
    path: Union[str, Path],
    step: Optional[int] = None,
    extras: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if step is not None:
        net.step = step
    if extras:
        net.extras.update(extras)

    header = MlpCheckpoint(widths=net.widths, seed=net.seed, step=net.step, extras=net.extras)
    tensors = {name: value.detach().contiguous() for name, value in net.state_dict().items()}
    save_file(tensors, str(path), metadata=header.to_metadata())
    logger.debug(f"✓ Saved checkpoint {path} (widths={net.widths}, step={net.step})")
    return path


def read_checkpoint_metadata(path: Union[str, Path]) -> Dict[str, str]:
    try:
        with safe_open(str(path), framework="pt") as f:
            return f.metadata() or {}
    except (SafetensorError, OSError, ValueError) as e:
        raise CheckpointError(f"Cannot read checkpoint header of {path}: {e}") from e


def load_checkpoint(path: Union[str, Path]) -> Mlp:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint {path} does not exist")

    header = MlpCheckpoint.from_metadata(read_checkpoint_metadata(path))
    if header.format_version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"Checkpoint {path} has format version {header.format_version}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )
    try:
        tensors = load_file(str(path))
    except (SafetensorError, OSError, ValueError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    try:
        net = Mlp(header.widths, seed=header.seed)
        net.load_state_dict(tensors, strict=True)
    except (RuntimeError, ConfigurationError) as e:
        raise CheckpointError(f"Checkpoint {path} does not match its architecture: {e}") from e
    net.step = header.step
    net.extras = dict(header.extras)
    return net
