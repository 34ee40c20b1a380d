"""
Adaptive Moment Optimizer

Bias-corrected first/second-moment gradient updates over a name -> array
parameter mapping. Deterministic: no randomness, fixed iteration order.

Update per parameter (t = step count after increment):
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g^2
    p = p - lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .config import TrainConfig
from .errors import NonFiniteGradient, ShapeMismatch
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment estimates and step count."""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def check_gradients(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradient(f"gradient of {name!r} has {bad} non-finite entries")


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: Optional[AdamState], config: TrainConfig
              ) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One adaptive-moment update.

    Parameters:
    -----------
    params : dict
        name -> parameter array
    grads : dict
        name -> gradient array (same shapes); missing names count as zero.
        A parameter whose gradient is all zero keeps its value
    state : AdamState or None
        Moments from the previous step (fresh state when None)
    config : TrainConfig
        learning_rate, beta1, beta2, eps

    Returns:
    --------
    new_params : dict
    new_state : AdamState
    """
    state = state if state is not None else AdamState.zeros_like(params)
    check_gradients(grads)

    step = state.step + 1
    bc1 = 1.0 - config.beta1 ** step
    bc2 = 1.0 - config.beta2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g)
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeMismatch(f"optimizer state for {name!r} does not match parameter shape {p.shape}")
        m = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        v = config.beta2 * state.v[name] + (1.0 - config.beta2) * (g * g)
        if g.any():
            new_params[name] = p - config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        else:
            # an all-zero gradient only decays the moments
            new_params[name] = p.copy()
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(step=step, m=new_m, v=new_v)


class AdamOptimizer:
    """
    In-place optimizer over model Tensors.

    Reads ``grad`` from each tensor, applies :func:`adam_step` and writes the
    result back into ``data``.
    """

    def __init__(self, params: Mapping[str, Tensor], config: TrainConfig):
        self.params = params
        self.config = config
        self.state = AdamState.zeros_like({n: p.data for n, p in params.items()})

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        values = {n: p.data for n, p in self.params.items()}
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        updated, self.state = adam_step(values, grads, self.state, self.config)
        for name, p in self.params.items():
            p.data[...] = updated[name]
