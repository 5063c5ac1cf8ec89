"""Adam optimizer and gradient-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import GradientError, ShapeMismatchError


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared hyperparameters."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.7
    beta2: float = 0.8
    epsilon: float = 1e-8
    learning_rate: float = 1e-3

    @classmethod
    def zeros_like(cls, params: list[Tensor], learning_rate: float,
                   beta1: float = 0.7, beta2: float = 0.8,
                   epsilon: float = 1e-8) -> "AdamState":
        return cls(first_moment=[np.zeros_like(p.data) for p in params],
                   second_moment=[np.zeros_like(p.data) for p in params],
                   step_count=0, beta1=beta1, beta2=beta2,
                   epsilon=epsilon, learning_rate=learning_rate)


def adam_step(params: list[Tensor], grads: list[np.ndarray],
              state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to params in place.

    The whole step aborts (state untouched) if any gradient is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise GradientError("adam_step: params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ShapeMismatchError("adam_step", g.shape, p.data.shape)
        if not np.isfinite(g).all():
            raise GradientError("adam_step: non-finite gradient, step aborted")
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
    return state


class Adam:
    """Object wrapper binding an AdamState to a fixed parameter list."""

    def __init__(self, params: list[Tensor], learning_rate: float,
                 beta1: float = 0.7, beta2: float = 0.8, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = AdamState.zeros_like(self.params, learning_rate,
                                          beta1, beta2, epsilon)

    def step(self) -> None:
        grads = []
        for p in self.params:
            grads.append(np.zeros_like(p.data) if p.grad is None else p.grad)
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm
