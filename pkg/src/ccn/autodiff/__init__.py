"""Dense float64 numerics with reverse-mode differentiation."""

from .graph import Graph, Node, OPS
from .engine import (
    FiniteDiffReport,
    GradStore,
    LeafCheck,
    backward_grad,
    finite_diff_check,
    forward_eval,
    relative_error,
)
from .optim import AdaGradState, adagrad_step

__all__ = [
    "Graph",
    "Node",
    "OPS",
    "GradStore",
    "FiniteDiffReport",
    "LeafCheck",
    "forward_eval",
    "backward_grad",
    "finite_diff_check",
    "relative_error",
    "AdaGradState",
    "adagrad_step",
]
