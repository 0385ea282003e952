"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError


@dataclass
class AdamState:
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params],
                   0, beta1, beta2, epsilon)


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """One in-place Adam update of ``params`` (tensors) from ``grads`` (arrays)."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ShapeError("params, grads and moments differ in length")
    state.step_count += 1
    t = state.step_count
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.data.shape != g.shape or m.shape != g.shape:
            raise ShapeError(f"shape mismatch in adam_step: param {p.data.shape}, grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype, copy=False)


class Adam:
    def __init__(self, params, lr: float = 6e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if not lr > 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.state = AdamState.for_params(self.params, beta1, beta2, eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)
