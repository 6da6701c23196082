"""
ADAM with bias correction over named parameter arrays.

The update is functional: ``adam_step`` returns new parameter arrays and a
new ``AdamState`` and never mutates its inputs, so a state can be saved to a
checkpoint and resumed.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Tuple

import numpy as np

from src.common.exceptions import ConfigurationError, ShapeMismatchError


@dataclass(frozen=True)
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError(f"Learning rate must be >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("ADAM betas must lie in [0, 1)")
        if self.step < 0:
            raise ConfigurationError(f"ADAM step must be >= 0, got {self.step}")

    def with_lr(self, lr: float) -> "AdamState":
        return replace(self, lr=lr)


def adam_step(
    state: AdamState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected ADAM update of every parameter in ``params``."""
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    step_size = state.lr / bc1

    new_params: Dict[str, np.ndarray] = {}
    m: Dict[str, np.ndarray] = dict(state.m)
    v: Dict[str, np.ndarray] = dict(state.v)
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ShapeMismatchError(
                f"Gradient of {name} has shape {g.shape}, expected {np.shape(p)}"
            )
        m_prev = m.get(name, np.zeros_like(g))
        v_prev = v.get(name, np.zeros_like(g))
        m[name] = state.beta1 * m_prev + (1.0 - state.beta1) * g
        v[name] = state.beta2 * v_prev + (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(v[name] / bc2) + state.eps
        new_params[name] = np.asarray(p, dtype=np.float64) - step_size * m[name] / denom
    return new_params, replace(state, step=t, m=m, v=v)


def decayed_lr(lr: float, decay: float, iteration: int, iterations: int) -> float:
    """``lr * decay**(iteration / iterations)``: exponential decay over a run."""
    if iterations <= 0:
        return lr
    return lr * decay ** (iteration / iterations)


def geometric_lr(start: float, end: float, iteration: int, iterations: int) -> float:
    """Log-linear interpolation from ``start`` (first step) to ``end`` (last step)."""
    if iterations <= 1:
        return start
    return start * (end / start) ** (iteration / (iterations - 1))
