"""Dense float64 primitives and the gradient bookkeeping shared by all modules.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  Every
differentiable operation here comes with a closed-form backward helper;
models compose them and push gradients into :class:`Param` accumulators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(values, dtype=DTYPE)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


@dataclass
class Param:
    """A trainable matrix plus its gradient accumulator.

    ``kind`` is ``"weight"`` or ``"bias"``; parameter accounting only counts
    weights.
    """

    name: str
    value: np.ndarray
    kind: str = "weight"
    grad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.value = as_matrix(self.value, self.name)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return int(self.value.size)

    def accumulate(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=DTYPE).reshape(self.value.shape)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise ``x_i @ w + b``; ``x`` may carry leading batch axes."""
    x = np.asarray(x, dtype=DTYPE)
    w = np.asarray(w, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE).reshape(-1)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"cannot apply weight {w.shape} to input {x.shape}")
    if b.shape[0] != w.shape[1]:
        raise DimensionError(f"bias has {b.shape[0]} entries, expected {w.shape[1]}")
    return x @ w + b


def affine_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray):
    """Gradients of :func:`affine` given upstream ``dout``.

    Returns ``(dx, dw, db)`` with ``dw``/``db`` summed over all leading axes.
    """
    v, d = w.shape
    x2 = x.reshape(-1, v)
    g2 = dout.reshape(-1, d)
    dw = x2.T @ g2
    db = g2.sum(axis=0, keepdims=True)
    dx = dout @ w.T
    return dx, dw, db


def logsumexp0(xs: Sequence[float] | np.ndarray) -> float:
    """``log(1 + sum(exp(xs)))`` without overflow; 0 for empty input."""
    arr = np.asarray(xs, dtype=DTYPE).reshape(-1)
    if arr.size == 0:
        return 0.0
    m = max(0.0, float(arr.max()))
    return m + float(np.log(np.exp(-m) + np.exp(arr - m).sum()))


def masked_logsumexp0(x: np.ndarray, mask: np.ndarray, axis=(-2, -1)):
    """Batched ``logsumexp0`` over the cells where ``mask`` is true.

    Returns ``(lse, softmax)`` where ``softmax`` is ``exp(x - lse)`` on masked
    cells and 0 elsewhere; that is also the gradient of ``lse`` w.r.t. ``x``.
    """
    filled = np.where(mask, x, -np.inf)
    m = np.maximum(filled.max(axis=axis, keepdims=True), 0.0)
    e = np.where(mask, np.exp(np.where(mask, x, 0.0) - m), 0.0)
    total = np.exp(-m) + e.sum(axis=axis, keepdims=True)
    lse = m + np.log(total)
    soft = e / total
    return np.squeeze(lse, axis=axis), soft


@dataclass
class LossGraph:
    """A computed scalar loss and the closure that backpropagates it.

    ``backprop(seed)`` must accumulate ``seed * d(value)/d(param)`` into each
    touched param's ``grad``.
    """

    value: float
    backprop: Callable[[float], None]
    params: list[Param] = field(default_factory=list)


def backward(graph: LossGraph, params: Iterable[Param] | None = None) -> None:
    """Accumulate d(loss)/d(param) into ``grad`` for the graph's params.

    Calling twice without :func:`zero_grads` accumulates twice.
    """
    graph.backprop(1.0)


def sum_loss(p: Param) -> LossGraph:
    return LossGraph(
        float(p.value.sum()),
        lambda seed: p.accumulate(seed * np.ones_like(p.value)),
        [p],
    )


def half_sq_norm_loss(p: Param) -> LossGraph:
    return LossGraph(
        0.5 * float((p.value**2).sum()),
        lambda seed: p.accumulate(seed * p.value),
        [p],
    )


def central_difference(f: Callable[[], float], arr: np.ndarray, index, h: float = 1e-5) -> float:
    """Central finite difference of ``f`` w.r.t. ``arr[index]`` (restored after)."""
    orig = arr[index]
    arr[index] = orig + h
    fp = f()
    arr[index] = orig - h
    fm = f()
    arr[index] = orig
    return (fp - fm) / (2.0 * h)


def relative_error(analytic: float, numeric: float, floor: float = 1e-2) -> float:
    """``|a - fd| / max(|fd|, floor)``; ``<= 1e-4`` means within max(1e-4|fd|, 1e-6)."""
    return abs(analytic - numeric) / max(abs(numeric), floor)
