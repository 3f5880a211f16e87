"""
Derivative engine for physics-informed training
Input derivatives (up to second order) of network outputs, and parameter
gradients of losses built from them, on top of torch autograd.

Input jets are taken with create_graph=True, so a loss that contains U_t or
u_xx stays differentiable with respect to every network parameter. The
autograd graph recorded during the forward pass is the parameter tape.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import torch
from torch import Tensor, nn

from .errors import ConfigurationError, NonFiniteError, UnsupportedOrderError

logger = logging.getLogger(__name__)

MAX_ORDER = 2
DTYPE = torch.float64


def configure_determinism(threads: Optional[int] = None) -> None:
    """Deterministic float64 CPU kernels; identical inputs give identical gradients"""
    torch.use_deterministic_algorithms(True)
    if threads is not None:
        torch.set_num_threads(threads)


def as_tensor(values, requires_grad: bool = False) -> Tensor:
    tensor = torch.as_tensor(values, dtype=DTYPE)
    if requires_grad:
        tensor = tensor.detach().clone().requires_grad_(True)
    return tensor


def input_width(network: nn.Module) -> Optional[int]:
    """Declared input width of a network, if it exposes one"""
    return getattr(network, "in_features", None)


def check_finite(node: str, tensor: Tensor) -> None:
    """Raise NonFiniteError naming the node and the first bad entry"""
    finite = torch.isfinite(tensor.detach())
    if bool(finite.all()):
        return
    bad = (~finite).reshape(finite.shape[0], -1).any(dim=1) if finite.ndim > 1 else ~finite
    index = int(torch.nonzero(bad)[0, 0]) if finite.ndim > 0 else None
    raise NonFiniteError(node, index=index)


@dataclass(frozen=True)
class Jet:
    """
    Batched second-order jet of a network's outputs

    value: (n, outputs)
    d1:    (n, outputs, k) first partials w.r.t. the k tagged inputs
    d2:    (n, outputs, k, k) second partials, symmetric in the last two axes;
           None when only first order was requested
    """

    value: Tensor
    d1: Tensor
    d2: Optional[Tensor]
    tags: Tuple[int, ...]

    def partial(self, tag: int) -> Tensor:
        return self.d1[..., self.tags.index(tag)]

    def second(self, tag_a: int, tag_b: int) -> Tensor:
        if self.d2 is None:
            raise UnsupportedOrderError(2, max_order=1)
        return self.d2[..., self.tags.index(tag_a), self.tags.index(tag_b)]


def _grad(output: Tensor, points: Tensor) -> Tensor:
    if not output.requires_grad:
        return torch.zeros_like(points)
    grad = torch.autograd.grad(output.sum(), points, create_graph=True, allow_unused=True)[0]
    return torch.zeros_like(points) if grad is None else grad


def jet_eval(
    network: nn.Module,
    inputs: Tensor,
    tags: Optional[Sequence[int]] = None,
    order: int = 2,
) -> Jet:
    """
    Evaluate network outputs with first and second partials w.r.t. tagged inputs

    Rows of `inputs` are independent points, so the gradient of the summed
    output w.r.t. the point batch gives every per-point partial at once.
    """
    if order > MAX_ORDER:
        raise UnsupportedOrderError(order, MAX_ORDER)
    if order < 1:
        raise ConfigurationError(f"Jet order must be 1 or 2, got {order}")

    if inputs.ndim == 1:
        inputs = inputs.unsqueeze(0)
    width = input_width(network)
    if width is not None and inputs.shape[-1] != width:
        raise ConfigurationError(
            f"Network expects {width} inputs, point has {inputs.shape[-1]} coordinates"
        )
    tags = tuple(range(inputs.shape[-1])) if tags is None else tuple(tags)
    if any(tag < 0 or tag >= inputs.shape[-1] for tag in tags):
        raise ConfigurationError(f"Tagged inputs {tags} out of range for {inputs.shape[-1]} coordinates")

    points = inputs.detach().clone().to(DTYPE).requires_grad_(True)
    value = network(points)
    if value.ndim == 1:
        value = value.unsqueeze(-1)

    first_rows = []
    second_rows = []
    for j in range(value.shape[-1]):
        grad = _grad(value[:, j], points)
        first = grad[:, list(tags)]
        first_rows.append(first)
        if order == 2:
            hessian = [_grad(first[:, a], points)[:, list(tags)] for a in range(len(tags))]
            second_rows.append(torch.stack(hessian, dim=1))

    d1 = torch.stack(first_rows, dim=1)
    d2 = None
    if order == 2:
        d2 = torch.stack(second_rows, dim=1)
        d2 = 0.5 * (d2 + d2.transpose(-1, -2))
    return Jet(value=value, d1=d1, d2=d2, tags=tags)


def network_parameters(networks: Mapping[str, Optional[nn.Module]]) -> Dict[str, list]:
    return {
        name: [p for p in net.parameters() if p.requires_grad]
        for name, net in networks.items()
        if net is not None
    }


def param_grad(
    loss: Tensor,
    networks: Mapping[str, Optional[nn.Module]],
    retain_graph: bool = False,
) -> Dict[str, Tensor]:
    """
    Gradient of a scalar loss w.r.t. every trainable parameter of every network

    Returns one flat vector per network name, in `parameters()` order, including
    contributions that flow through input-derivative terms.
    """
    if loss.numel() != 1:
        raise ConfigurationError(f"Loss must be scalar, got shape {tuple(loss.shape)}")
    check_finite("loss", loss)

    grouped = network_parameters(networks)
    flat = [p for params in grouped.values() for p in params]
    if not flat:
        return {name: torch.zeros(0, dtype=DTYPE) for name in grouped}
    grads = torch.autograd.grad(loss, flat, retain_graph=retain_graph, allow_unused=True)

    result: Dict[str, Tensor] = {}
    cursor = 0
    for name, params in grouped.items():
        pieces = []
        for p in params:
            g = grads[cursor]
            cursor += 1
            pieces.append(torch.zeros_like(p).reshape(-1) if g is None else g.reshape(-1))
        result[name] = torch.cat(pieces) if pieces else torch.zeros(0, dtype=DTYPE)
        check_finite(f"grad[{name}]", result[name])
    return result


def assign_grads(networks: Mapping[str, Optional[nn.Module]], grads: Mapping[str, Tensor]) -> None:
    """Write flat gradients back into `.grad` so a torch optimizer can step"""
    for name, params in network_parameters(networks).items():
        cursor = 0
        flat = grads[name]
        for p in params:
            size = p.numel()
            p.grad = flat[cursor:cursor + size].view_as(p).detach().clone()
            cursor += size
