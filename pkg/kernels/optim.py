"""
Adam with a step-halving learning-rate schedule.

Moment buffers are float64; parameters keep their own dtype. The update has no
randomness, so identical gradients in identical order give identical weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Module, Parameter, ShapeError


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Parameter], grads: list[np.ndarray], state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update applied in place to `params`."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g in zip(params, grads):
        g = np.zeros(p.data.shape) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"{p.name}: gradient {g.shape} does not match parameter {p.data.shape}")
        m = state.m.setdefault(p.name, np.zeros(p.data.shape))
        v = state.v.setdefault(p.name, np.zeros(p.data.shape))
        if m.shape != p.data.shape or v.shape != p.data.shape:
            raise ShapeError(f"{p.name}: optimizer state shape mismatch")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = p.data.astype(np.float64) - update
    return state


def halving_lr(base_lr: float, epoch: int, period: int) -> float:
    """Learning rate halved every `period` epochs (epoch counted from 0)."""
    if period <= 0:
        return base_lr
    return base_lr * 0.5 ** (epoch // period)


class Adam:

    def __init__(self, model: Module, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.model = model
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        params = self.model.parameters()
        adam_step(params, [p.grad for p in params], self.state, self.lr, self.betas, self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {'adam.step': np.array([self.state.step], dtype=np.float64)}
        for name, m in self.state.m.items():
            out[f"adam.m.{name}"] = m
            out[f"adam.v.{name}"] = self.state.v[name]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.state = AdamState(step=int(state['adam.step'][0]))
        for key, value in state.items():
            if key.startswith('adam.m.'):
                self.state.m[key[len('adam.m.'):]] = np.array(value, dtype=np.float64)
            elif key.startswith('adam.v.'):
                self.state.v[key[len('adam.v.'):]] = np.array(value, dtype=np.float64)
