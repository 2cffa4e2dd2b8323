"""Rotary position encoding.

Dimension pairs ``(2k, 2k+1)`` at position ``p`` are rotated by ``p * theta_k``
with ``theta_k = base ** (-2k / dim)``.  Rotations compose additively, so
``<R_i q, R_j k> == <q, R_{j-i} k>`` and span scores only see relative
offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DTYPE, DimensionError


@dataclass(frozen=True)
class RotaryEncoding:
    dim: int
    base: float = 10000.0
    angles: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.dim <= 0 or self.dim % 2:
            raise ValueError(f"rotary dimension must be positive and even, got {self.dim}")
        if self.base <= 0:
            raise ValueError(f"rotary base must be positive, got {self.base}")
        k = np.arange(self.dim // 2, dtype=DTYPE)
        object.__setattr__(self, "angles", self.base ** (-2.0 * k / self.dim))

    def tables(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """cos/sin tables of shape ``(n, dim/2)`` for positions ``0..n-1``."""
        phase = np.arange(n, dtype=DTYPE)[:, None] * self.angles[None, :]
        return np.cos(phase), np.sin(phase)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Rotate ``x[..., p, :]`` by position ``p`` (positions on axis -2)."""
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected last axis {self.dim}, got shape {x.shape}")
        cos, sin = self.tables(x.shape[-2])
        return _rotate_pairs(x, cos, sin)

    def apply_backward(self, dout: np.ndarray) -> np.ndarray:
        """Gradient of :meth:`apply`; the transpose of a rotation is the inverse."""
        cos, sin = self.tables(dout.shape[-2])
        return _rotate_pairs(dout, cos, -sin)


def _rotate_pairs(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x, dtype=DTYPE)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rotate(enc: RotaryEncoding, x, position: int) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.shape != (enc.dim,):
        raise DimensionError(f"expected vector of length {enc.dim}, got shape {x.shape}")
    if position < 0:
        raise ValueError(f"position must be nonnegative, got {position}")
    phase = position * enc.angles
    return _rotate_pairs(x, np.cos(phase), np.sin(phase))


def rel_score(enc: RotaryEncoding, q, k, i: int, j: int) -> float:
    q = np.asarray(q, dtype=DTYPE)
    k = np.asarray(k, dtype=DTYPE)
    if q.shape != k.shape:
        raise DimensionError(f"query {q.shape} and key {k.shape} differ")
    return float(rotate(enc, q, i) @ rotate(enc, k, j))
