"""Dense rank-4 tensors in (batch, channel, height, width) layout.

Everything in this library moves through :class:`Tensor`: a frozen,
C-contiguous float32/float64 array of rank 4. Lower-rank data (biases,
per-channel scales) is stored with unit dims, e.g. a bias vector for
``c`` output channels lives in shape ``(1, c, 1, 1)`` so it broadcasts
along batch and spatial axes.
"""

from __future__ import annotations

import numpy as np

_ALLOWED = (np.dtype(np.float32), np.dtype(np.float64))
# extended precision is an internal evaluation dtype (finite-difference
# probes); it never appears in public constructors or serialized files
_INTERNAL = _ALLOWED + (np.dtype(np.longdouble),)


class ShapeError(ValueError):
    """A tensor shape violates an operation's contract."""


class Tensor:
    """Immutable dense rank-4 array, row-major (n, c, h, w).

    The constructor copies its input; internal code that owns a fresh
    array uses :meth:`Tensor.wrap` to avoid the copy. The underlying
    buffer is marked read-only either way.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, order="C")
        self.data = _checked(arr, _ALLOWED)

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt ``arr`` without copying. Caller must not keep a writable ref."""
        t = object.__new__(cls)
        t.data = _checked(np.ascontiguousarray(arr), _INTERNAL)
        return t

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        return Tensor.wrap(self.data.astype(dtype))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def _checked(arr: np.ndarray, allowed=_ALLOWED) -> np.ndarray:
    if arr.dtype not in allowed:
        raise TypeError(f"tensor dtype must be float32 or float64, got {arr.dtype}")
    if arr.ndim != 4:
        raise ShapeError(f"tensors are rank-4 (n, c, h, w), got shape {arr.shape}")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all dims must be >= 1, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor.wrap(np.zeros(shape, dtype=dtype))


def full(shape, value, dtype=np.float64) -> Tensor:
    return Tensor.wrap(np.full(shape, value, dtype=dtype))


def zeros_like(t: Tensor) -> Tensor:
    return Tensor.wrap(np.zeros_like(t.data))


class Rng:
    """Deterministic random stream: PCG64 keyed by a 64-bit seed.

    The same seed yields a bit-identical stream on every platform
    (PCG64 is integer-based; float conversion is exact and fixed by
    numpy's Generator).
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape, low=-1.0, high=1.0, dtype=np.float64) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(dtype)

    def random(self, shape) -> np.ndarray:
        """Uniform [0, 1) in float64 (used for dropout masks)."""
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int) -> int:
        """One integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def choice(self, seq):
        return seq[self.integers(0, len(seq))]

    def tensor(self, shape, low=-1.0, high=1.0, dtype=np.float64) -> Tensor:
        return Tensor.wrap(self.uniform(shape, low, high, dtype))
