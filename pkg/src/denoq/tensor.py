"""Dense float64 tensor substrate and seeded randomness.

Arrays are plain numpy ndarrays in row-major layout; every public helper
normalizes its inputs to float64 so downstream numerics behave identically
everywhere. Matrix products go through :func:`matmul`, which uses a fixed
accumulation order (ascending reduction index, no BLAS dispatch) so repeated
calls with identical inputs are bit-identical regardless of thread count.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

# Convention: a "Tensor" in this package is a float64 ndarray.
Tensor = np.ndarray


def as_real(x, name: str = "tensor") -> np.ndarray:
    """Convert to a float64 array, rejecting non-finite values."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def _as_vector(v, length: int, name: str) -> np.ndarray:
    vec = as_real(v, name)
    if vec.ndim != 1 or vec.shape[0] != length:
        raise DimensionError(
            f"{name} must be a 1-d vector of length {length}, got shape {vec.shape}"
        )
    return vec


@dataclass(frozen=True)
class IntTensor:
    """Integer codes plus the nominal bit-width they were produced under.

    Codes are stored as int64 regardless of nominal_bits; the declared width
    is what range checks and accumulator headroom math reason about.
    """

    codes: np.ndarray
    nominal_bits: int

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if not np.issubdtype(codes.dtype, np.integer):
            raise DomainError("IntTensor codes must be integers")
        codes = codes.astype(np.int64)
        object.__setattr__(self, "codes", codes)
        if not (2 <= self.nominal_bits <= 64):
            raise DomainError(f"nominal_bits out of range: {self.nominal_bits}")
        if self.nominal_bits < 64:
            lo = -(1 << (self.nominal_bits - 1))
            hi = (1 << (self.nominal_bits - 1)) - 1
            if codes.size and (codes.min() < lo or codes.max() > hi):
                raise DomainError(
                    f"codes exceed the {self.nominal_bits}-bit two's complement range"
                )

    @property
    def shape(self) -> tuple:
        return self.codes.shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with a fixed, deterministic accumulation order.

    einsum (non-optimized) walks the reduction index in ascending order with
    no BLAS involvement, so the result is reproducible bit-for-bit across
    runs and thread counts. Shapes must be [M x K] . [K x N].
    """
    a = as_real(a, "matmul lhs")
    b = as_real(b, "matmul rhs")
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects two 2-d tensors")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} . {b.shape}")
    return np.einsum("ik,kj->ij", a, b, optimize=False)


def channel_div(x: Tensor, v) -> Tensor:
    """Divide activation columns by a strictly positive per-channel vector.

    x is [B x C]; column c is divided by v[c].
    """
    x = as_real(x, "activations")
    if x.ndim != 2:
        raise DimensionError("channel_div expects a 2-d activation tensor")
    vec = _as_vector(v, x.shape[1], "channel divisors")
    if np.any(vec <= 0.0):
        raise DomainError("channel divisors must be strictly positive")
    return x / vec[None, :]


def channel_mul(w: Tensor, v) -> Tensor:
    """Scale weight rows by a per-channel vector: row c is multiplied by v[c]."""
    w = as_real(w, "weights")
    if w.ndim != 2:
        raise DimensionError("channel_mul expects a 2-d weight tensor")
    vec = _as_vector(v, w.shape[0], "channel factors")
    return w * vec[:, None]


# ---------------------------------------------------------------------------
# Seeded randomness
# ---------------------------------------------------------------------------


def _label_entropy(label: str) -> int:
    digest = hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Deterministic random stream (PCG64) with named substreams.

    The same seed yields the same stream on every platform. child(label)
    derives an independent stream from a stable hash of the label, so the
    draw order of one pipeline stage never perturbs another.
    """

    def __init__(self, seed: int, _extra: tuple = ()):
        if not isinstance(seed, int):
            raise DomainError("seed must be an integer")
        self.seed = seed
        self._extra = tuple(_extra)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((seed,) + self._extra))
        )

    def child(self, label: str) -> "Rng":
        return Rng(self.seed, self._extra + (_label_entropy(label),))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
