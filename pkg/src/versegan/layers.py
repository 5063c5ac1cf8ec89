"""Parameterized layers shared by the generator and discriminator."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatchError


class LSTMLayer:
    """Single LSTM layer; gate order along the 4H axis is [i, f, g, o]."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        bound = 1.0 / math.sqrt(hidden_size)
        self.w_input = Tensor(rng.uniform(-bound, bound, (input_size, 4 * hidden_size)),
                              requires_grad=True)
        self.w_recur = Tensor(rng.uniform(-bound, bound, (hidden_size, 4 * hidden_size)),
                              requires_grad=True)
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size:2 * hidden_size] = 1.0  # forget gate open at init
        self.bias = Tensor(bias, requires_grad=True)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("w_input", self.w_input), ("w_recur", self.w_recur),
                ("bias", self.bias)]

    def step(self, x: Tensor, h: Tensor, c: Tensor,
             w_recur: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """One time step; `w_recur` may be a weight-dropped substitute."""
        w_r = self.w_recur if w_recur is None else w_recur
        gates = ad.add(ad.add(ad.matmul(x, self.w_input), ad.matmul(h, w_r)),
                       self.bias)
        hs = self.hidden_size
        i = ad.sigmoid(ad.slice_axis(gates, 0, hs))
        f = ad.sigmoid(ad.slice_axis(gates, hs, 2 * hs))
        g = ad.tanh(ad.slice_axis(gates, 2 * hs, 3 * hs))
        o = ad.sigmoid(ad.slice_axis(gates, 3 * hs, 4 * hs))
        c_next = ad.add(ad.mul(f, c), ad.mul(i, g))
        h_next = ad.mul(o, ad.tanh(c_next))
        return h_next, c_next


class Linear:
    """Affine map [in] -> [out]."""

    def __init__(self, in_size: int, out_size: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(in_size)
        self.weight = Tensor(rng.uniform(-bound, bound, (in_size, out_size)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_size), requires_grad=True)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("weight", self.weight), ("bias", self.bias)]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)


class BatchNorm:
    """Batch normalization over features, with EMA running statistics."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [("running_mean", self.running_mean),
                ("running_var", self.running_var)]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.shape[-1] != self.num_features:
            raise ShapeMismatchError("batch_norm-features", x.shape,
                                     (self.num_features,))
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, training=training,
                             momentum=self.momentum, eps=self.eps)
