"""Span scoring heads producing per-type ``n x n`` score tensors.

* ``gp``: per-type query/key projections, ``s(i,j) = <R_i q_i, R_j k_j>``.
* ``egp``: shared projections for the extraction term plus a per-type
  vector over ``[q_i; k_i; q_j; k_j]``.
* ``egp-h``: shared extraction term plus a per-type vector over ``[h_i; h_j]``.

All heads operate on a batch ``h`` of shape ``(B, n, v)`` and return scores of
shape ``(B, T, n, n)``.  RoPE, when enabled, only rotates the query/key
dot-product term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import EntityTypeSet, span_mask
from .numerics import DTYPE, DimensionError, Param, affine, affine_backward
from .rope import RotaryEncoding

HEAD_KINDS = ("gp", "egp", "egp-h")
MASK_FILL = -1e30


@dataclass
class ScoreTensor:
    scores: np.ndarray  # (T, n, n)
    mask: np.ndarray  # (n, n) bool
    types: EntityTypeSet

    def display(self) -> np.ndarray:
        """Scores with masked-out cells set to a large negative sentinel."""
        return np.where(self.mask[None], self.scores, MASK_FILL)


def added_params(kind: str, v: int, d: int) -> int:
    """Weights (biases excluded) added when one entity type is registered."""
    if v <= 0 or d <= 0:
        raise ValueError("v and d must be positive")
    if kind == "gp":
        return 2 * v * d
    if kind == "egp":
        return 4 * d
    if kind == "egp-h":
        return 2 * v
    raise ValueError(f"unknown head kind {kind!r}; expected one of {HEAD_KINDS}")


def weight_count(params) -> int:
    return sum(p.size for p in params if p.kind == "weight")


def _glorot(rng, rows, cols):
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def _init(rng, init, rows, cols):
    if init == "zeros":
        return np.zeros((rows, cols))
    return _glorot(rng, rows, cols)


class _Head:
    kind = ""

    def __init__(self, types: EntityTypeSet, v: int, d: int, rope: RotaryEncoding | None):
        if rope is not None and rope.dim != d:
            raise DimensionError(f"rotary dim {rope.dim} != head dim {d}")
        self.types = types
        self.v = v
        self.d = d
        self.rope = rope

    def _rotate(self, x):
        return x if self.rope is None else self.rope.apply(x)

    def _unrotate(self, dx):
        return dx if self.rope is None else self.rope.apply_backward(dx)

    def score(self, h: np.ndarray, mask: np.ndarray) -> ScoreTensor:
        """Single-sentence convenience wrapper over :meth:`forward`."""
        scores, _ = self.forward(np.asarray(h, dtype=DTYPE)[None])
        return ScoreTensor(scores[0], mask, self.types)

    def _check(self, h):
        if h.ndim != 3 or h.shape[-1] != self.v:
            raise DimensionError(f"expected representations (B, n, {self.v}), got {h.shape}")


class GlobalPointerHead(_Head):
    kind = "gp"

    def __init__(self, types, v, d, rope=None, rng=None, init="glorot"):
        super().__init__(types, v, d, rope)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w_q, self.b_q, self.w_k, self.b_k = {}, {}, {}, {}
        for t in types:
            self.w_q[t] = Param(f"gp.{t}.W_q", _init(rng, init, v, d))
            self.b_q[t] = Param(f"gp.{t}.b_q", np.zeros((1, d)), kind="bias")
            self.w_k[t] = Param(f"gp.{t}.W_k", _init(rng, init, v, d))
            self.b_k[t] = Param(f"gp.{t}.b_k", np.zeros((1, d)), kind="bias")

    def params(self) -> list[Param]:
        out = []
        for t in self.types:
            out += [self.w_q[t], self.b_q[t], self.w_k[t], self.b_k[t]]
        return out

    def project(self, h: np.ndarray, type_name: str):
        if type_name not in self.types:
            raise KeyError(f"unknown entity type {type_name!r}")
        q = affine(h, self.w_q[type_name].value, self.b_q[type_name].value)
        k = affine(h, self.w_k[type_name].value, self.b_k[type_name].value)
        return q, k

    def forward(self, h):
        self._check(h)
        wq = np.stack([self.w_q[t].value for t in self.types])  # (T, v, d)
        wk = np.stack([self.w_k[t].value for t in self.types])
        bq = np.stack([self.b_q[t].value for t in self.types])  # (T, 1, d)
        bk = np.stack([self.b_k[t].value for t in self.types])
        q = h[:, None] @ wq + bq[None]  # (B, T, n, d)
        k = h[:, None] @ wk + bk[None]
        qr, kr = self._rotate(q), self._rotate(k)
        scores = qr @ np.swapaxes(kr, -1, -2)
        return scores, (h, qr, kr)

    def backward(self, cache, dscores):
        h, qr, kr = cache
        dq = self._unrotate(dscores @ kr)
        dk = self._unrotate(np.swapaxes(dscores, -1, -2) @ qr)
        ht = np.swapaxes(h, -1, -2)[:, None]  # (B, 1, v, n)
        dwq = (ht @ dq).sum(axis=0)
        dwk = (ht @ dk).sum(axis=0)
        dbq = dq.sum(axis=(0, 2))
        dbk = dk.sum(axis=(0, 2))
        for a, t in enumerate(self.types):
            self.w_q[t].accumulate(dwq[a])
            self.w_k[t].accumulate(dwk[a])
            self.b_q[t].accumulate(dbq[a])
            self.b_k[t].accumulate(dbk[a])
        wq = np.stack([self.w_q[t].value for t in self.types])
        wk = np.stack([self.w_k[t].value for t in self.types])
        return (dq @ np.swapaxes(wq, -1, -2) + dk @ np.swapaxes(wk, -1, -2)).sum(axis=1)


class _SharedHead(_Head):
    """Shared extraction projections common to both efficient variants."""

    w_len = 0

    def __init__(self, types, v, d, rope=None, rng=None, init="glorot"):
        super().__init__(types, v, d, rope)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w_q = Param(f"{self.kind}.W_q", _init(rng, init, v, d))
        self.b_q = Param(f"{self.kind}.b_q", np.zeros((1, d)), kind="bias")
        self.w_k = Param(f"{self.kind}.W_k", _init(rng, init, v, d))
        self.b_k = Param(f"{self.kind}.b_k", np.zeros((1, d)), kind="bias")
        n = self.w_len
        self.w_type = {t: Param(f"{self.kind}.{t}.w", _init(rng, init, 1, n)) for t in types}

    def params(self) -> list[Param]:
        return [self.w_q, self.b_q, self.w_k, self.b_k] + [self.w_type[t] for t in self.types]

    def project(self, h: np.ndarray, type_name: str | None = None):
        if type_name is not None and type_name not in self.types:
            raise KeyError(f"unknown entity type {type_name!r}")
        return affine(h, self.w_q.value, self.b_q.value), affine(h, self.w_k.value, self.b_k.value)

    def _type_matrix(self):
        return np.concatenate([self.w_type[t].value for t in self.types], axis=0)  # (T, len)

    def _class_inputs(self, h, q, k):
        raise NotImplementedError

    def forward(self, h):
        self._check(h)
        q, k = self.project(h)
        qr, kr = self._rotate(q), self._rotate(k)
        extraction = qr @ np.swapaxes(kr, -1, -2)  # (B, n, n)
        left, right = self._class_inputs(h, q, k)  # (B, n, m) each
        wt = self._type_matrix()
        m = left.shape[-1]
        start = np.einsum("bnm,tm->btn", left, wt[:, :m])
        end = np.einsum("bnm,tm->btn", right, wt[:, m:])
        scores = extraction[:, None] + start[..., :, None] + end[..., None, :]
        return scores, (h, q, k, qr, kr, left, right)

    def backward(self, cache, dscores):
        h, q, k, qr, kr, left, right = cache
        wt = self._type_matrix()
        m = left.shape[-1]
        dext = dscores.sum(axis=1)
        dstart = dscores.sum(axis=-1)  # (B, T, n)
        dend = dscores.sum(axis=-2)
        dwt = np.concatenate(
            [np.einsum("btn,bnm->tm", dstart, left), np.einsum("btn,bnm->tm", dend, right)], axis=1
        )
        for a, t in enumerate(self.types):
            self.w_type[t].accumulate(dwt[a])
        dleft = np.einsum("btn,tm->bnm", dstart, wt[:, :m])
        dright = np.einsum("btn,tm->bnm", dend, wt[:, m:])
        dq = self._unrotate(dext @ kr)
        dk = self._unrotate(np.swapaxes(dext, -1, -2) @ qr)
        dh, dq, dk = self._class_backward(dleft, dright, dq, dk)
        dhq, dwq, dbq = affine_backward(h, self.w_q.value, dq)
        dhk, dwk, dbk = affine_backward(h, self.w_k.value, dk)
        self.w_q.accumulate(dwq)
        self.b_q.accumulate(dbq)
        self.w_k.accumulate(dwk)
        self.b_k.accumulate(dbk)
        return dh + dhq + dhk


class EfficientGlobalPointerHead(_SharedHead):
    """Per-type term ``w . [q_i; k_i; q_j; k_j]`` over unrotated projections."""

    kind = "egp"

    @property
    def w_len(self):
        return 4 * self.d

    def _class_inputs(self, h, q, k):
        qk = np.concatenate([q, k], axis=-1)
        return qk, qk

    def _class_backward(self, dleft, dright, dq, dk):
        dqk = dleft + dright
        d = self.d
        return 0.0, dq + dqk[..., :d], dk + dqk[..., d:]


class EfficientGlobalPointerHHead(_SharedHead):
    """Per-type term ``w . [h_i; h_j]`` over the raw token representations."""

    kind = "egp-h"

    @property
    def w_len(self):
        return 2 * self.v

    def _class_inputs(self, h, q, k):
        return h, h

    def _class_backward(self, dleft, dright, dq, dk):
        return dleft + dright, dq, dk


def make_head(kind: str, types: EntityTypeSet, v: int, d: int, rope=None, rng=None, init="glorot") -> _Head:
    cls = {"gp": GlobalPointerHead, "egp": EfficientGlobalPointerHead, "egp-h": EfficientGlobalPointerHHead}
    if kind not in cls:
        raise ValueError(f"unknown head kind {kind!r}; expected one of {HEAD_KINDS}")
    return cls[kind](types, v, d, rope=rope, rng=rng, init=init)


def score_gp(h, params: GlobalPointerHead, mask=None) -> ScoreTensor:
    return _score_single(h, params, mask)


def score_egp(h, params: EfficientGlobalPointerHead, mask=None) -> ScoreTensor:
    return _score_single(h, params, mask)


def score_egp_h(h, params: EfficientGlobalPointerHHead, mask=None) -> ScoreTensor:
    return _score_single(h, params, mask)


def _score_single(h, head, mask):
    h = np.asarray(h, dtype=DTYPE)
    n = h.shape[0]
    if mask is None:
        mask = span_mask(n, n)
    return head.score(h, mask)
