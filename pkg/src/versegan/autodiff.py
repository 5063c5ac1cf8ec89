"""Reverse-mode automatic differentiation over numpy arrays.

Tensors form a define-by-run graph: every operation returns a fresh Tensor
holding the forward value and a closure that routes the output gradient to
the operation's inputs. `Tensor.backward()` replays those closures in
reverse topological order, accumulating gradients additively, so a tensor
feeding several consumers (weight tying, residual reuse) receives the sum
of all path contributions.

All arithmetic is float64. Graphs are rebuilt on every forward pass and
recording can be suspended with `no_grad()` (sampling, evaluation,
finite-difference probes).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GradientError, NonFiniteError, ShapeMismatchError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Suspend graph recording inside the `with` block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional float64 array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A graph-free view of this tensor's values."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate `.grad` of every reachable tensor with requires_grad."""
        if self.data.size != 1:
            raise GradientError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Convenience arithmetic; the named functions below do the real work.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS: training windows produce graphs deep enough to blow
    # the recursion limit.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise & linear algebra


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatchError("add", a.shape, b.shape) from None

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(data, "add", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatchError("mul", a.shape, b.shape) from None

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, "mul", (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(data, "matmul", (a, b), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    v = x.data
    data = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                    np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def backward(g):
        _accumulate(x, g * data * (1.0 - data))

    return _result(data, "sigmoid", (x,), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - data * data))

    return _result(data, "tanh", (x,), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def backward(g):
        _accumulate(x, g * (x.data > 0.0))

    return _result(data, "relu", (x,), backward)


# ---------------------------------------------------------------------------
# structural ops


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatchError("concat")
    base = list(tensors[0].shape)
    ax = axis % max(len(base), 1)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
                i != ax and other[i] != base[i] for i in range(len(base))):
            raise ShapeMismatchError("concat", tensors[0].shape, t.shape)
    data = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[ax] = slice(lo, hi)
            _accumulate(t, g[tuple(index)])

    return _result(data, "concat", tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeMismatchError("stack", shape, t.shape)
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _result(data, "stack", tensors, backward)


def slice_axis(x, start: int, stop: int, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    ax = axis % x.data.ndim
    index = [slice(None)] * x.data.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    data = x.data[index]

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = g
            _accumulate(x, full)

    return _result(data, "slice", (x,), backward)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _result(data, "reshape", (x,), backward)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeMismatchError("transpose", x.shape)
    data = x.data.T

    def backward(g):
        _accumulate(x, g.T)

    return _result(data, "transpose", (x,), backward)


def embedding(weight, ids) -> Tensor:
    """Rows of `weight` selected by an integer id array."""
    weight = as_tensor(weight)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeMismatchError("embedding", (int(ids.min()), int(ids.max())),
                                 weight.shape)
    data = weight.data[ids]

    def backward(g):
        if weight.requires_grad:
            full = np.zeros_like(weight.data)
            np.add.at(full, ids, g)
            _accumulate(weight, full)

    return _result(data, "embedding", (weight,), backward)


# ---------------------------------------------------------------------------
# reductions


def tsum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.data.shape).copy())

    return _result(data, "sum", (x,), backward)


def tmean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis), 1.0 / count)


# ---------------------------------------------------------------------------
# sequence pooling (inputs are [batch, time, features])


def _check_time_axis(x: Tensor, op: str) -> None:
    if x.data.ndim != 3 or x.shape[1] < 1:
        raise ShapeMismatchError(op, x.shape)


def _valid_mask(x: Tensor, lengths) -> np.ndarray:
    b, t, _ = x.shape
    if lengths is None:
        return np.ones((b, t, 1), dtype=bool)
    lengths = np.asarray(lengths)
    if lengths.shape != (b,) or lengths.min() < 1 or lengths.max() > t:
        raise ShapeMismatchError("pool-lengths", lengths.shape, x.shape)
    return (np.arange(t)[None, :] < lengths[:, None])[:, :, None]


def max_over_time(x, lengths=None) -> Tensor:
    """Per-feature max over the (valid) time axis: [B,T,H] -> [B,H]."""
    x = as_tensor(x)
    _check_time_axis(x, "max_over_time")
    valid = _valid_mask(x, lengths)
    masked = np.where(valid, x.data, -np.inf)
    idx = masked.argmax(axis=1)  # [B,H]
    b, _, h = x.shape
    rows = np.arange(b)[:, None]
    cols = np.arange(h)[None, :]
    data = x.data[rows, idx, cols]

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, (rows, idx, cols), g)
            _accumulate(x, full)

    return _result(data, "max_over_time", (x,), backward)


def mean_over_time(x, lengths=None) -> Tensor:
    """Per-feature mean over the (valid) time axis: [B,T,H] -> [B,H]."""
    x = as_tensor(x)
    _check_time_axis(x, "mean_over_time")
    valid = _valid_mask(x, lengths)
    counts = valid.sum(axis=1).astype(np.float64)  # [B,1]
    data = np.where(valid, x.data, 0.0).sum(axis=1) / counts

    def backward(g):
        if x.requires_grad:
            _accumulate(x, valid * (g / counts)[:, None, :])

    return _result(data, "mean_over_time", (x,), backward)


def last_over_time(x, lengths=None) -> Tensor:
    """Hidden state at the final (valid) step: [B,T,H] -> [B,H]."""
    x = as_tensor(x)
    _check_time_axis(x, "last_over_time")
    b, t, h = x.shape
    if lengths is None:
        idx = np.full(b, t - 1)
    else:
        idx = np.asarray(lengths) - 1
        if idx.min() < 0 or idx.max() >= t:
            raise ShapeMismatchError("last_over_time", x.shape)
    rows = np.arange(b)
    data = x.data[rows, idx, :]

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, (rows, idx), g)
            _accumulate(x, full)

    return _result(data, "last_over_time", (x,), backward)


# ---------------------------------------------------------------------------
# softmax family & losses


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * data).sum(axis=axis, keepdims=True)
            _accumulate(x, data * (g - inner))

    return _result(data, "softmax", (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        if x.requires_grad:
            soft = np.exp(data)
            _accumulate(x, g - soft * g.sum(axis=axis, keepdims=True))

    return _result(data, "log_softmax", (x,), backward)


def take_along_last(x, ids) -> Tensor:
    """Pick x[..., ids[...]] along the final axis; ids has x's leading shape."""
    x = as_tensor(x)
    ids = np.asarray(ids)
    if ids.shape != x.shape[:-1]:
        raise ShapeMismatchError("take_along_last", ids.shape, x.shape)
    data = np.take_along_axis(x.data, ids[..., None], axis=-1)[..., 0]

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
            _accumulate(x, full)

    return _result(data, "take_along_last", (x,), backward)


def cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood (nats) of integer targets.

    `logits` is [..., V], `targets` an integer array of the leading shape.
    `mask`, when given, weights positions (0 excludes, 1 keeps); the mean is
    taken over kept positions only.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatchError("cross_entropy", targets.shape, logits.shape)
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[-1]):
        raise ShapeMismatchError("cross_entropy-targets",
                                 (int(targets.min()), int(targets.max())),
                                 logits.shape)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    if mask is None:
        weights = np.ones_like(nll)
    else:
        weights = np.asarray(mask, dtype=np.float64)
        if weights.shape != nll.shape:
            raise ShapeMismatchError("cross_entropy-mask", weights.shape, nll.shape)
    count = weights.sum()
    if count <= 0:
        raise ShapeMismatchError("cross_entropy-mask", weights.shape)
    data = (nll * weights).sum() / count

    def backward(g):
        if logits.requires_grad:
            soft = np.exp(logp)
            soft_minus_onehot = soft.copy()
            np.put_along_axis(
                soft_minus_onehot, targets[..., None],
                np.take_along_axis(soft, targets[..., None], axis=-1) - 1.0,
                axis=-1)
            _accumulate(logits,
                        g * soft_minus_onehot * (weights / count)[..., None])

    return _result(data, "cross_entropy", (logits,), backward)


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy from pre-sigmoid scores, numerically stable."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != logits.shape:
        raise ShapeMismatchError("bce_with_logits", labels.shape, logits.shape)
    z = logits.data
    data = (np.maximum(z, 0.0) - z * labels + np.log1p(np.exp(-np.abs(z)))).mean()
    n = max(z.size, 1)

    def backward(g):
        if logits.requires_grad:
            s = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                         np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
            _accumulate(logits, g * (s - labels) / n)

    return _result(data, "bce_with_logits", (logits,), backward)


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Feature-wise batch normalization over a [N, F] batch.

    Training mode normalizes with batch statistics and folds them into the
    running arrays in place (exponential moving average); eval mode uses the
    running statistics, so single-row batches are fine there.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeMismatchError("batch_norm", x.shape, gamma.shape)
    n = x.shape[0]
    if training:
        if n < 2:
            raise ShapeMismatchError("batch_norm-train-batch", x.shape)
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    data = gamma.data * xhat + beta.data

    def backward(g):
        _accumulate(gamma, (g * xhat).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))
        if x.requires_grad:
            if training:
                dxhat = g * gamma.data
                dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                                      - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dx = g * gamma.data * inv_std
            _accumulate(x, dx)

    return _result(data, "batch_norm", (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# dropout masks


def dropout_mask(shape: tuple[int, ...], p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability p, survivors scaled 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise GradientError(f"dropout probability must be in [0,1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def apply_mask(x, mask: np.ndarray) -> Tensor:
    """Multiply activations (or weights) by a fixed dropout mask."""
    return mul(x, Tensor(mask))


# ---------------------------------------------------------------------------
# gradient checking


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be deterministic (freeze any randomness) and return a scalar
    Tensor computed from `params`. The error at each entry is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    zero_grads(params)
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                hi = float(f().data)
                flat[i] = orig - eps
                lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(ana_flat[i] - numeric) / max(1.0, abs(ana_flat[i]), abs(numeric))
            worst = max(worst, err)
    zero_grads(params)
    return worst
