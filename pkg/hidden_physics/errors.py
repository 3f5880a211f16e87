"""
Exception hierarchy for hidden-term discovery runs
Every error raised on purpose by the package derives from HiddenPhysicsError
"""

from typing import Optional


class HiddenPhysicsError(Exception):
    """Base class for all package errors"""


class ConfigurationError(HiddenPhysicsError, ValueError):
    """Inconsistent dimensions, unknown names, or invalid run settings"""


class UnsupportedOrderError(HiddenPhysicsError):
    """Input-derivative order above what the jet engine carries"""

    def __init__(self, order: int, max_order: int = 2):
        self.order = order
        self.max_order = max_order
        super().__init__(f"Derivative order {order} requested, at most {max_order} is supported")


class NonFiniteError(HiddenPhysicsError, FloatingPointError):
    """
    NaN or Inf met during a forward or backward pass

    Carries the node (loss term, network or tensor name) where the value
    appeared, the optimizer iteration if known, and the first offending
    flat index (the collocation/data point for per-point residuals).
    """

    def __init__(self, node: str, index: Optional[int] = None, iteration: Optional[int] = None):
        self.node = node
        self.index = index
        self.iteration = iteration
        where = f"node '{node}'"
        if index is not None:
            where += f", point {index}"
        if iteration is not None:
            where += f", iteration {iteration}"
        super().__init__(f"Non-finite value at {where}")

    def at_iteration(self, iteration: int) -> "NonFiniteError":
        return NonFiniteError(self.node, self.index, iteration)


class IntegrationError(HiddenPhysicsError, ArithmeticError):
    """Time integration blew up"""

    def __init__(self, time: float, detail: str = "non-finite state"):
        self.time = time
        super().__init__(f"Integration failed at t={time:.6g}: {detail}")


class CheckpointError(HiddenPhysicsError, OSError):
    """Corrupt, truncated, or version-mismatched checkpoint file"""


class ConditioningError(HiddenPhysicsError, ArithmeticError):
    """Rank-deficient regression problem without regularization"""
