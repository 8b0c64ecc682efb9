"""Dense float64 tensors with reverse-mode automatic differentiation.

Operations are free functions taking an optional :class:`Tape`.  When a tape
is supplied, each operation appends its backward closure; ``Tape.backward``
replays the closures in exact reverse order, so gradient accumulation order is
fixed and runs are bitwise reproducible.  With ``tape=None`` the same
functions compute values only (inference mode).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError, NumericError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """A float64 array with an optional same-shape gradient."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{label})"


class Tape:
    """Ordered record of primitive operations for the backward pass.

    Records are appended in forward order, which is a topological order by
    construction; ``backward`` visits them strictly reversed.
    """

    def __init__(self):
        self._records: list = []

    def __len__(self) -> int:
        return len(self._records)

    def record(self, backward_fn) -> None:
        self._records.append(backward_fn)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._records):
            fn()


def _accumulate(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Add ``g`` into ``t.grad``.

    ``owned=True`` promises that no *other* tensor will ever accumulate
    through an alias of ``g``, so the buffer can be adopted directly on first
    accumulation.  Backward closures may donate a buffer to at most one
    recipient; any second recipient of the same buffer must pass
    ``owned=False`` so it gets a private copy.
    """
    if t.grad is None:
        t.grad = g if owned else np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` along axes introduced by broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data + b.data)
    if tape is not None:
        def backward():
            ga = _unbroadcast(out.grad, a.shape)
            gb = _unbroadcast(out.grad, b.shape)
            # When neither operand was broadcast, ga and gb are both
            # out.grad itself; only one accumulator may adopt that buffer.
            _accumulate(a, ga, owned=True)
            _accumulate(b, gb, owned=gb is not ga)
        tape.record(backward)
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data * b.data)
    if tape is not None:
        def backward():
            _accumulate(a, _unbroadcast(out.grad * b.data, a.shape), owned=True)
            _accumulate(b, _unbroadcast(out.grad * a.data, b.shape), owned=True)
        tape.record(backward)
    return out


def scale(a: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data * c)
    if tape is not None:
        def backward():
            _accumulate(a, out.grad * c, owned=True)
        tape.record(backward)
    return out


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    if tape is not None:
        def backward():
            ga = np.matmul(out.grad, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), out.grad)
            _accumulate(a, _unbroadcast(ga, a.shape), owned=True)
            _accumulate(b, _unbroadcast(gb, b.shape), owned=True)
        tape.record(backward)
    return out


def transpose(a: Tensor, axes: tuple[int, ...], tape: Tape | None = None) -> Tensor:
    out = Tensor(np.transpose(a.data, axes))
    if tape is not None:
        inverse = np.argsort(axes)
        def backward():
            # A strided view of out.grad; out.grad is dead once this runs,
            # so the single recipient may adopt it.
            _accumulate(a, np.transpose(out.grad, inverse), owned=True)
        tape.record(backward)
    return out


def reshape(a: Tensor, shape: tuple[int, ...], tape: Tape | None = None) -> Tensor:
    out = Tensor(np.reshape(a.data, shape))
    if tape is not None:
        def backward():
            _accumulate(a, np.reshape(out.grad, a.shape), owned=True)
        tape.record(backward)
    return out


def gelu(a: Tensor, tape: Tape | None = None) -> Tensor:
    """Smooth GELU (tanh form); no kinks, so finite-difference checks are clean."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + _GELU_A * (x2 * x))
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))
    if tape is not None:
        def backward():
            d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
            local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
            _accumulate(a, out.grad * local, owned=True)
        tape.record(backward)
    return out


def softmax_rows(a: Tensor, tape: Tape | None = None) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    x = a.data
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ValueError(f"softmax_rows needs a non-empty last axis, got {a.shape}")
    rowmax = x.max(axis=-1, keepdims=True)
    # max propagates NaN, so checking the row maxima sees any NaN in x.
    if np.isnan(rowmax).any():
        raise NumericError("softmax_rows: NaN in input")
    shifted = x - rowmax
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)
    if tape is not None:
        def backward():
            g = out.grad
            dot = (g * p).sum(axis=-1, keepdims=True)
            _accumulate(a, p * (g - dot), owned=True)
        tape.record(backward)
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5,
               tape: Tape | None = None) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then affine."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(
            f"layer_norm gain/bias must match last extent {d}, "
            f"got {gain.shape} and {bias.shape}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)
    if tape is not None:
        def backward():
            g = out.grad
            dxhat = g * gain.data
            # dL/dx for per-row normalization with population variance
            mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
            mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
            dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
            _accumulate(a, dx, owned=True)
            reduce_axes = tuple(range(g.ndim - 1))
            _accumulate(gain, (g * xhat).sum(axis=reduce_axes), owned=True)
            _accumulate(bias, g.sum(axis=reduce_axes), owned=True)
        tape.record(backward)
    return out


def embedding(table: Tensor, ids: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Gather rows of ``table`` by integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError(
            f"embedding ids out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}")
    out = Tensor(table.data[ids])
    if tape is not None:
        def backward():
            g = np.zeros_like(table.data)
            np.add.at(g, ids, out.grad)
            _accumulate(table, g, owned=True)
        tape.record(backward)
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_id: int,
                  tape: Tape | None = None) -> Tensor:
    """Mean negative log-likelihood over positions whose target != ignore_id."""
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy expects [N, V] logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.data.shape
    if targets.shape != (n,):
        raise ValueError(f"cross_entropy targets shape {targets.shape} != ({n},)")
    keep = targets != ignore_id
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise DataError("cross_entropy: every position carries the ignore id")
    kept = targets[keep]
    if kept.min() < 0 or kept.max() >= v:
        raise ValueError(f"cross_entropy target id outside [0, {v})")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    logp = x - lse
    rows = np.arange(n)
    nll = -(logp[rows, targets.clip(0, v - 1)])
    loss = float((nll * keep).sum() / n_keep)
    out = Tensor(loss)
    if tape is not None:
        p = np.exp(logp)
        def backward():
            g = p.copy()
            g[rows, targets.clip(0, v - 1)] -= 1.0
            g[~keep] = 0.0
            g *= out.grad / n_keep
            _accumulate(logits, g, owned=True)
        tape.record(backward)
    return out


def mse(pred: Tensor, target: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean squared elementwise difference."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = Tensor(float((diff ** 2).sum() / n))
    if tape is not None:
        def backward():
            g = out.grad * 2.0 * diff / n
            _accumulate(pred, g, owned=True)
            _accumulate(target, -g, owned=True)
        tape.record(backward)
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator,
            tape: Tape | None = None) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.data * mask)
    if tape is not None:
        def backward():
            _accumulate(a, out.grad * mask, owned=True)
        tape.record(backward)
    return out
