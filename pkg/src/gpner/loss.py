"""Multi-label span loss with an implicit threshold class.

For each sentence and type the loss is

    log(1 + sum_{neg} exp(s)) + log(1 + sum_{pos} exp(-s))

which pushes positive cells above 0 and negative cells below it.  The
batch loss sums over types and averages over sentences.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable, Sequence

import numpy as np

from .data import CorpusError, EntityTypeSet, Span
from .numerics import DTYPE, logsumexp0, masked_logsumexp0

LOSS_KINDS = ("global-pointer", "bce")


def multilabel_loss(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> float:
    return logsumexp0(neg_scores) + logsumexp0(-np.asarray(pos_scores, dtype=DTYPE))


def multilabel_loss_grad(pos_scores, neg_scores) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ``(dL/dpos, dL/dneg)``."""
    pos = np.asarray(pos_scores, dtype=DTYPE)
    neg = np.asarray(neg_scores, dtype=DTYPE)
    gneg = np.exp(neg - logsumexp0(neg)) if neg.size else neg.copy()
    gpos = -np.exp(-pos - logsumexp0(-pos)) if pos.size else pos.copy()
    return gpos, gneg


def multilabel_loss_threshold(pos_scores, neg_scores, threshold: float = 0.0) -> float:
    """Loss against an explicit threshold score, via the factored form

    ``log(e^t + sum_neg e^s) + log(e^-t + sum_pos e^-s)``, evaluated as
    ``logsumexp0(neg - t) + logsumexp0(t - pos)`` (the two ``t`` terms cancel).
    """
    pos = np.asarray(pos_scores, dtype=DTYPE).reshape(-1)
    neg = np.asarray(neg_scores, dtype=DTYPE).reshape(-1)
    return logsumexp0(neg - threshold) + logsumexp0(-(pos - threshold))


def multilabel_loss_threshold_naive(pos_scores, neg_scores, threshold: float = 0.0) -> float:
    """Unfactored double sum over (neg, pos) pairs plus the threshold terms."""
    total = 1.0
    for si, sj in itertools.product(neg_scores, pos_scores):
        total += math.exp(si - sj)
    for si in neg_scores:
        total += math.exp(si - threshold)
    for sj in pos_scores:
        total += math.exp(threshold - sj)
    return math.log(total)


def softmax_cross_entropy(scores: Sequence[float], target: int) -> float:
    """Single-label cross entropy in its ``log(1 + sum_{i != t} e^{s_i - s_t})`` form."""
    st = scores[target]
    return math.log1p(sum(math.exp(s - st) for i, s in enumerate(scores) if i != target))


def pairwise_ranking_loss(pos_scores, neg_scores) -> float:
    """``log(1 + sum_neg e^{s_i} * sum_pos e^{-s_j})`` (no threshold class)."""
    pos = np.asarray(pos_scores, dtype=DTYPE).reshape(-1)
    neg = np.asarray(neg_scores, dtype=DTYPE).reshape(-1)
    if not pos.size or not neg.size:
        return 0.0
    cross = float(np.logaddexp.reduce(neg) + np.logaddexp.reduce(-pos))
    return float(np.logaddexp(0.0, cross))


# ---------------------------------------------------------------------------
# batched span loss


def batch_span_loss(
    scores: np.ndarray,
    positives: np.ndarray,
    mask: np.ndarray,
    kind: str = "global-pointer",
    threshold: float = 0.0,
) -> tuple[float, np.ndarray]:
    """Mean-over-sentences loss and its gradient w.r.t. ``scores``.

    ``scores``/``positives``: (B, T, n, n); ``mask``: (B, n, n).  Only masked
    cells are read; the gradient is exactly zero elsewhere.
    """
    B = scores.shape[0]
    if B == 0:
        return 0.0, np.zeros_like(scores)
    valid = np.broadcast_to(mask[:, None], scores.shape)
    if kind == "bce":
        return _bce(scores, positives, valid)
    if kind != "global-pointer":
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    pos = positives & valid
    neg = valid & ~positives
    shifted = scores - threshold
    lse_neg, soft_neg = masked_logsumexp0(shifted, neg)
    lse_pos, soft_pos = masked_logsumexp0(-shifted, pos)
    per_sentence = (lse_neg + lse_pos).sum(axis=1)
    loss = float(per_sentence.mean())
    grad = (soft_neg - soft_pos) / B
    return loss, grad


def _bce(scores, positives, valid):
    # per-cell binary cross entropy on sigmoid(s), mean over valid cells per type
    B = scores.shape[0]
    s = np.where(valid, scores, 0.0)
    y = positives.astype(DTYPE)
    # log(1 + e^s) - y s, stably
    cell = np.logaddexp(0.0, s) - y * s
    count = np.maximum(valid.sum(axis=(-2, -1), keepdims=True), 1)
    loss = float((np.where(valid, cell, 0.0) / count).sum() / B)
    sig = 0.5 * (1.0 + np.tanh(0.5 * s))
    grad = np.where(valid, (sig - y) / count, 0.0) / B
    return loss, grad


def label_cells(labels: Iterable[Span], types: EntityTypeSet, mask: np.ndarray) -> np.ndarray:
    """(T, n, n) positives for one sentence; rejects labels outside ``mask``."""
    n = mask.shape[0]
    out = np.zeros((len(types), n, n), dtype=bool)
    for s in labels:
        if not (0 <= s.start <= s.end < n) or not mask[s.start, s.end]:
            raise CorpusError(f"label ({s.start}, {s.end}, {s.type}) lies outside the valid span mask")
        out[types.index(s.type), s.start, s.end] = True
    return out


def span_loss(scores, labels: Iterable[Span], threshold: float = 0.0) -> float:
    """Loss of one sentence's :class:`~gpner.heads.ScoreTensor` against its labels."""
    pos = label_cells(labels, scores.types, scores.mask)
    loss, _ = batch_span_loss(scores.scores[None], pos[None], scores.mask[None], threshold=threshold)
    return loss
