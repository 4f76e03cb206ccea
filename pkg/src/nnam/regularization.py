"""Dropout, the per-epoch dynamic dropout schedule, and early stopping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingDivergedError
from .numeric import Rng


def dropout_apply(x: np.ndarray, p: float, mode: str, rng: Rng | None = None) -> np.ndarray:
    """Inverted dropout: zero units with probability p in train mode, scale
    survivors by 1/(1-p); eval mode is the identity."""
    out, _ = dropout_apply_seq(x, p, mode, rng)
    return out


def dropout_apply_seq(x: np.ndarray, p: float, mode: str, rng: Rng | None = None
                      ) -> tuple[np.ndarray, np.ndarray | None]:
    """Like :func:`dropout_apply` but also returns the multiplicative mask
    (None when nothing was dropped) so a backward pass can reuse it."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0,1), got {p}")
    if mode == "eval" or p == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = rng.bernoulli(1.0 - p, x.shape) / (1.0 - p)
    return x * mask, mask


@dataclass
class DropoutSchedule:
    """Either a constant p or the ramp-up / ramp-down schedule: p = 0 for the
    first 20% of epochs, linear to ``peak_p`` at the middle epoch, linear back
    to 0 at the final epoch."""

    kind: str = "constant"
    p_const: float = 0.2
    peak_p: float = 0.15
    total_epochs: int = 20

    def __post_init__(self):
        if self.kind not in ("constant", "dynamic"):
            raise ConfigError(f"dropout schedule kind must be constant|dynamic, got {self.kind!r}")
        if not (0.0 <= self.p_const < 1.0 and 0.0 <= self.peak_p < 1.0):
            raise ConfigError("dropout probabilities must be in [0,1)")
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")


def schedule_p(s: DropoutSchedule, epoch: int) -> float:
    if not 0 <= epoch < s.total_epochs:
        raise IndexError(f"epoch {epoch} out of range [0, {s.total_epochs})")
    if s.kind == "constant":
        return s.p_const
    last = s.total_epochs - 1
    ramp_start = int(np.floor(0.2 * s.total_epochs))
    mid = s.total_epochs // 2
    if epoch <= ramp_start or epoch == last:
        return 0.0
    if epoch <= mid:
        return s.peak_p * (epoch - ramp_start) / (mid - ramp_start)
    return s.peak_p * (last - epoch) / (last - mid)


@dataclass
class StopState:
    """Tracks the previous development criterion for strict-increase stopping."""

    previous: float | None = None


def should_stop(state: StopState, dev_criterion: float) -> tuple[StopState, bool]:
    """True iff the criterion strictly increased versus the previous epoch.

    Ties continue training; the first call never stops.
    """
    if not np.isfinite(dev_criterion):
        raise TrainingDivergedError(f"development criterion is not finite: {dev_criterion}")
    stop = state.previous is not None and dev_criterion > state.previous
    return StopState(previous=float(dev_criterion)), stop
