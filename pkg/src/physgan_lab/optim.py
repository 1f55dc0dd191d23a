"""Adam optimizer over named parameter tensors."""

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import DimensionError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First and second moment estimates plus the step counter."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Apply one bias-corrected Adam update.

    Parameters are replaced by new arrays rather than written in place, so any
    snapshot taken before the step stays valid. Missing gradients count as zero.

    Raises:
        DimensionError: If a gradient or moment buffer disagrees with its parameter's shape.
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"Gradient for '{name}' has shape {g.shape}, parameter has {p.data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.data.shape:
            raise DimensionError(f"Adam state for '{name}' has shape {m.shape}, parameter has {p.data.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        state.m[name] = m
        state.v[name] = v
    return state


class Adam:
    """Adam bound to a fixed set of named parameters."""

    def __init__(
        self, params: Mapping[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> None:
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, scale: float = 1.0) -> None:
        """Update from the gradients currently stored on the parameters."""
        grads = {name: (None if p.grad is None else p.grad * scale) for name, p in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
