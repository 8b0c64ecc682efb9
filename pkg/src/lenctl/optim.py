"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            step=0,
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction.

    ``grads`` maps parameter names to gradient arrays; tensors whose gradient
    is missing are skipped (their moments stay untouched).  A zero gradient
    leaves the parameter unchanged.  Iteration follows the insertion order of
    ``params``, so updates are deterministic.
    """
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != tensor.data.shape:
            raise ValueError(
                f"adam_step gradient shape {g.shape} != parameter shape "
                f"{tensor.data.shape} for {name!r}")
        if state.m[name].shape != tensor.data.shape:
            raise ValueError(f"adam_step state shape mismatch for {name!r}")
        if not np.isfinite(g).all():
            raise NumericError(f"adam_step: non-finite gradient for tensor {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
