"""Dense-tensor substrate.

Tensors are plain ``numpy.ndarray`` values: row-major, rank 1-3
(batch x time x channels at most), float32 by default.  Training and
benchmarks run in float32; gradient checking runs in float64 because
finite differences are not trustworthy in single precision.

Everything here is a pure function of its inputs; randomness comes from
an explicit ``Rng`` passed into every stochastic op, never from global
state.
"""

import numpy as np
from scipy.special import expit

from .errors import ArgumentError, DimensionError

DEFAULT_DTYPE = np.float32
GRAD_DTYPE = np.float64


class Rng:
    """Counter-based random stream (Philox). Same seed, same stream, bit for bit."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, shape, low=0.0, high=1.0, dtype=DEFAULT_DTYPE):
        return self._gen.uniform(low, high, size=shape).astype(dtype, copy=False)

    def normal(self, shape, scale=1.0, dtype=DEFAULT_DTYPE):
        return (self._gen.standard_normal(size=shape) * scale).astype(dtype, copy=False)

    def random01(self, shape):
        """Uniform [0, 1) in float64, the raw material for Bernoulli draws."""
        return self._gen.random(size=shape)

    def integers(self, low, high=None):
        return int(self._gen.integers(low, high))

    def shuffle(self, seq):
        """In-place Fisher-Yates shuffle of a list (deterministic per stream)."""
        for i in range(len(seq) - 1, 0, -1):
            j = int(self._gen.integers(0, i + 1))
            seq[i], seq[j] = seq[j], seq[i]

    def spawn(self):
        """Derive an independent child stream; advances this stream by one draw."""
        return Rng(self.integers(0, 2**63))


def as_tensor(data, dtype=DEFAULT_DTYPE):
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim < 1 or arr.ndim > 3:
        raise DimensionError(f"tensors are rank 1-3, got rank {arr.ndim}")
    return arr


def matmul(a, b):
    """Matrix product of two rank-2 tensors with explicit shape checking."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul needs two matrices, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def tanh(x):
    return np.tanh(x)


def sigmoid(x):
    return expit(x)


def neg(x):
    return -np.asarray(x)


def add_const(x, c):
    x = np.asarray(x)
    return x + x.dtype.type(c)


def _check_binary(a, b):
    """Shapes must match, or one operand is a channel vector broadcast over time."""
    if a.shape == b.shape:
        return
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return
    raise DimensionError(f"incompatible elementwise shapes {a.shape} and {b.shape}")


def add(a, b):
    a, b = np.asarray(a), np.asarray(b)
    _check_binary(a, b)
    return a + b


def sub(a, b):
    a, b = np.asarray(a), np.asarray(b)
    _check_binary(a, b)
    return a - b


def mul(a, b):
    a, b = np.asarray(a), np.asarray(b)
    _check_binary(a, b)
    return a * b


def softmax(x, axis=-1):
    """Stable softmax along ``axis`` (max-subtracted). Rejects NaN input."""
    x = np.asarray(x)
    if np.isnan(x).any():
        raise ArgumentError("softmax input contains NaN")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def bernoulli_mask(rng, shape, p_keep, dtype=DEFAULT_DTYPE):
    """0/1 tensor, each element 1 with probability ``p_keep``."""
    if not 0.0 <= p_keep <= 1.0:
        raise ArgumentError(f"p_keep must be in [0, 1], got {p_keep}")
    return (rng.random01(shape) < p_keep).astype(dtype)
