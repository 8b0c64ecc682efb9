"""Decoder position-index plans.

A position plan maps decoding step t to the row of the learned position
embedding table the decoder looks up.  Two schemes exist:

* ``forward`` -- ascending ``0, 1, 2, ...`` capped at the table size.
* ``reverse`` -- ``clamp(target_len - 1 + noise - t, 0, max_index)``: the
  index names how many tokens remain after emitting token t, reaching 0
  exactly at the final token when the noise offset is 0.

During training the noise offset is drawn once per sequence as a standard
normal truncated toward zero (so it is 0 about 68% of the time and
occasionally +/-1, +/-2, ...), which keeps the countdown from being an
exact hard schedule.  At inference the offset is 0 and decoding may run
past the target; indices then saturate at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEME_FORWARD = "forward"
SCHEME_REVERSE = "reverse"
PLAN_SCHEMES = (SCHEME_FORWARD, SCHEME_REVERSE)


@dataclass(frozen=True)
class PositionPlan:
    """Index scheme plus the per-sequence state it needs.

    ``target_len`` is required by the reverse scheme and may be a scalar or
    a 1-D array (one target per batch row); ``noise`` broadcasts against it.
    The forward scheme ignores both.
    """

    scheme: str
    max_index: int
    target_len: object = None
    noise: object = 0

    def __post_init__(self):
        if self.scheme not in PLAN_SCHEMES:
            raise ValueError(f"unknown position scheme {self.scheme!r}; "
                             f"expected one of {PLAN_SCHEMES}")
        if self.max_index < 0:
            raise ValueError(f"max_index must be non-negative, "
                             f"got {self.max_index}")
        if self.scheme == SCHEME_REVERSE:
            if self.target_len is None:
                raise ValueError("reverse position plan needs target_len")
            if np.any(np.asarray(self.target_len) < 1):
                raise ValueError("target_len must be >= 1")


def position_indices(plan: PositionPlan, step_count: int) -> np.ndarray:
    """Embedding rows for ``step_count`` decoder slots.

    Returns shape ``[T]`` for a scalar-target plan, ``[B, T]`` when the
    plan's ``target_len`` is a length-B array.
    """
    if step_count < 0:
        raise ValueError(f"step_count must be non-negative, got {step_count}")
    steps = np.arange(step_count, dtype=np.int64)
    if plan.scheme == SCHEME_FORWARD:
        return np.minimum(steps, plan.max_index)
    lengths = np.asarray(plan.target_len, dtype=np.int64)
    noises = np.asarray(plan.noise, dtype=np.int64)
    start = lengths - 1 + noises
    if start.ndim == 0:
        indices = start - steps
    else:
        indices = start[:, None] - steps[None, :]
    return np.clip(indices, 0, plan.max_index)


def sample_noise(rng: np.random.Generator) -> int:
    """One countdown offset: standard normal truncated toward zero."""
    return int(np.trunc(rng.standard_normal()))


def sample_noise_batch(rng: np.random.Generator, size: int) -> np.ndarray:
    """Per-sequence countdown offsets for a batch."""
    return np.trunc(rng.standard_normal(size)).astype(np.int64)
