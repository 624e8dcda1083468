"""Numeric array primitives shared by every other module.

Tensors are plain ``numpy.ndarray`` objects of dtype ``float32`` in C
(row-major) order.  Randomness always flows through an explicit
:class:`RngState`, which wraps numpy's counter-based Philox generator so
that a given seed yields the same stream on every platform.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes do not compose."""


def check_shape(shape) -> tuple[int, ...]:
    dims = tuple(int(d) for d in np.atleast_1d(shape))
    if not dims or any(d < 1 for d in dims):
        raise ShapeError(f"invalid shape {tuple(shape)}: every extent must be >= 1")
    return dims


class RngState:
    """Seeded counter-based random stream (Philox-4x64).

    Two instances built from the same seed produce bitwise-identical draws.
    ``spawn`` derives an independent child stream without touching the
    parent's counter, which keeps unrelated consumers (split, shuffle,
    augmentation, init) decoupled from one another.
    """

    def __init__(self, seed: int = 0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.Philox(seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, key: int) -> RngState:
        # Philox keyed on (seed, key): child streams never overlap the parent.
        child = RngState.__new__(RngState)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.Philox(key=[self.seed, int(key)]))
        return child

    def uniform(self, lo, hi, size=None):
        return self._gen.uniform(lo, hi, size)

    def integers(self, lo, hi=None, size=None):
        return self._gen.integers(lo, hi, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)


def tensor_fill(shape, value) -> np.ndarray:
    return np.full(check_shape(shape), value, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return a @ b


def argmax(t: np.ndarray) -> int:
    """Index of the largest element; ties go to the lowest index."""
    t = np.asarray(t)
    if t.size == 0:
        raise ValueError("argmax of an empty tensor")
    if t.ndim != 1:
        raise ShapeError(f"argmax expects a rank-1 tensor, got shape {t.shape}")
    return int(np.argmax(t))


def seeded_uniform(shape, lo: float, hi: float, rng: RngState) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"seeded_uniform needs lo < hi, got lo={lo}, hi={hi}")
    dims = check_shape(shape)
    # Draw in float64 then narrow; clamp guards the rare round-up to hi.
    values = rng.uniform(lo, hi, dims).astype(DTYPE)
    top = np.nextafter(DTYPE(hi), DTYPE(lo))
    return np.minimum(values, top)


def reshape(t: np.ndarray, shape) -> np.ndarray:
    dims = check_shape(shape)
    if int(np.prod(dims)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {dims}")
    return np.ascontiguousarray(t).reshape(dims)
