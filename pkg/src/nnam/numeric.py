"""Dense math primitives: activations, losses, seeded randomness, finite differences.

Everything operates on float64 numpy arrays. Matrices are 2-D row-major
arrays, vectors are 1-D arrays.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import OracleError, ShapeError


class Rng:
    """Explicit, splittable random source backed by the Philox counter generator.

    Equal seeds give equal draw sequences on every platform. A single Rng
    must not be shared between concurrent callers; use :meth:`split` to
    derive independent children instead.
    """

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def split(self, n: int) -> list["Rng"]:
        """Derive ``n`` independent child generators."""
        return [Rng(s) for s in self._seq.spawn(n)]

    def child(self) -> "Rng":
        return self.split(1)[0]

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def bernoulli(self, p: float, size) -> np.ndarray:
        """0/1 float64 mask with P(1) = p."""
        return (self._gen.random(size) < p).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def dirichlet(self, alpha: Sequence[float]) -> np.ndarray:
        return self._gen.dirichlet(alpha)


def affine(w: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """W x + b with explicit shape checking."""
    if w.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ShapeError(
            f"affine expects matrix/vector/vector, got {w.shape}/{x.shape}/{b.shape}"
        )
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise ShapeError(
            f"affine shape mismatch: W is {w.shape}, x is {x.shape}, b is {b.shape}"
        )
    return w @ x + b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(x: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(x))


def log_softmax(x: np.ndarray) -> np.ndarray:
    """Stable log-softmax along the last axis: x - max - log(sum(exp(x - max)))."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=-1, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy(log_probs: np.ndarray, target: int) -> float:
    """Negative log-probability of the target class."""
    n = log_probs.shape[-1]
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range for {n} classes")
    return float(-log_probs[target])


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one probe pair per coordinate."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    probe = theta.copy()
    for i in range(theta.size):
        orig = probe[i]
        probe[i] = orig + h
        hi = f(probe)
        probe[i] = orig - h
        lo = f(probe)
        probe[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise OracleError(f"non-finite value at probe coordinate {i}: f+={hi} f-={lo}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad
