"""Dense float64 primitives shared by the scorer and trainer.

Everything here is a thin, well-specified wrapper over numpy: 64-bit
arithmetic throughout (file formats downcast separately), a counter-based
seeded generator for reproducible initialization and shuffling, and a
central-difference gradient oracle used to verify the analytic backward
pass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DegenerateInputWarning",
    "Prng",
    "ParamTensor",
    "matmul",
    "sigmoid",
    "cosine",
    "log_sum_exp",
    "finite_diff_grad",
    "xavier_bound",
    "init_xavier",
]


class DegenerateInputWarning(UserWarning):
    """A zero-norm vector reached a cosine; the result is defined as 0."""


class Prng:
    """Seeded counter-based random stream (Philox 4x64).

    The same 64-bit seed always replays the same stream, independent of
    platform, which is what makes initialization and training runs
    reproducible byte for byte.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def beta(self, a: float, b: float) -> float:
        return float(self._gen.beta(a, b))


@dataclass
class ParamTensor:
    """A learnable tensor paired with its gradient accumulator."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad = np.asarray(self.grad, dtype=np.float64)
        if self.grad.shape != self.value.shape:
            raise ValueError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-d arrays, with explicit shape checking."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions do not agree: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x) -> np.ndarray:
    """Elementwise logistic function, overflow-safe for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def cosine(u, v) -> float:
    """Cosine similarity of two vectors.

    A zero-norm operand makes the similarity undefined; we define it as
    0.0 and emit :class:`DegenerateInputWarning`, since zero embeddings
    are degenerate data rather than a programming error.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        warnings.warn("cosine of a zero-norm vector, returning 0", DegenerateInputWarning)
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def log_sum_exp(xs) -> float:
    """log(sum(exp(xs))), computed max-shifted so large inputs do not overflow."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = float(np.max(xs))
    return m + float(np.log(np.sum(np.exp(xs - m))))


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    This is the independent oracle the analytic backward pass is checked
    against, so it deliberately shares no code with it.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def xavier_bound(rows: int, cols: int) -> float:
    return float(np.sqrt(6.0 / (rows + cols)))


def init_xavier(rows: int, cols: int, rng: Prng) -> np.ndarray:
    """Uniform Xavier initialization, deterministic given the generator seed."""
    if rows < 1 or cols < 1:
        raise ValueError("matrix dimensions must be at least 1")
    b = xavier_bound(rows, cols)
    return rng.uniform(-b, b, (rows, cols))
