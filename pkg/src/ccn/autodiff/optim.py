"""AdaGrad optimizer over named parameter arrays."""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from ..errors import ShapeError


@dataclass
class AdaGradState:
    """Per-parameter squared-gradient accumulators.

    Accumulators start at zero and are created lazily on first update.
    """

    learning_rate: float
    epsilon: float = 1e-8
    accumulators: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def adagrad_step(
    params: Dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdaGradState,
) -> Tuple[Dict[str, np.ndarray], AdaGradState]:
    """Apply one AdaGrad update in place.

    G <- G + g^2;  theta <- theta - lr * g / (sqrt(G) + eps), elementwise.
    Parameters without a gradient entry are left untouched.

    Args:
        params: Parameter arrays keyed by name (updated in place)
        grads: Gradients keyed by parameter name
        state: Optimizer state (accumulators updated in place)

    Returns:
        Tuple of (params, state)

    Raises:
        ShapeError: If a gradient or accumulator shape differs from its parameter
    """
    for name, g in grads.items():
        if name not in params:
            continue
        theta = params[name]
        if g.shape != theta.shape:
            raise ShapeError(name, f"gradient shape {g.shape} != parameter shape {theta.shape}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = np.zeros_like(theta)
            state.accumulators[name] = acc
        elif acc.shape != theta.shape:
            raise ShapeError(name, f"accumulator shape {acc.shape} != parameter shape {theta.shape}")
        acc += g * g
        theta -= state.learning_rate * g / (np.sqrt(acc) + state.epsilon)
    state.steps += 1
    return params, state
