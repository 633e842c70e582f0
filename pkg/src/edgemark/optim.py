"""Adam optimizer with L2 weight decay folded into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus the shared step counter."""

    learning_rate: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    def __init__(self, params: list[np.ndarray], learning_rate: float,
                 weight_decay: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(learning_rate, weight_decay, beta1, beta2, eps)
        self.state.m = [np.zeros_like(p) for p in params]
        self.state.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list) -> None:
        """One in-place Adam update. A None gradient is treated as zeros."""
        s = self.state
        if len(grads) != len(self.params):
            raise DimensionError(f"{len(grads)} grads for {len(self.params)} params")
        s.step_count += 1
        bc1 = 1.0 - s.beta1 ** s.step_count
        bc2 = 1.0 - s.beta2 ** s.step_count
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g is None:
                g = np.zeros_like(p)
            elif g.shape != p.shape:
                raise DimensionError(f"grad shape {g.shape} != param shape {p.shape}")
            if s.weight_decay:
                g = g + s.weight_decay * p
            s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g
            s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * (g * g)
            m_hat = s.m[i] / bc1
            v_hat = s.v[i] / bc2
            p -= s.learning_rate * m_hat / (np.sqrt(v_hat) + s.eps)


def adam_step(params: list[np.ndarray], grads: list, state: AdamState) -> None:
    """Functional form of one update against an existing AdamState."""
    opt = Adam.__new__(Adam)
    opt.params = params
    opt.state = state
    Adam.step(opt, grads)
