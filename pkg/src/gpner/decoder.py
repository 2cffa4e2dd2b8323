"""Turn score tensors into spans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Span


@dataclass(frozen=True, order=True)
class ScoredSpan:
    start: int
    end: int
    type: str
    score: float

    @property
    def span(self) -> Span:
        return Span(self.start, self.end, self.type)

    def overlaps(self, other: "ScoredSpan") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass
class Prediction:
    spans: list[ScoredSpan]

    def span_set(self) -> frozenset[Span]:
        return frozenset(s.span for s in self.spans)

    def __len__(self) -> int:
        return len(self.spans)


def decode_cells(scores: np.ndarray, mask: np.ndarray, type_names, threshold: float = 0.0) -> Prediction:
    """Every masked cell scoring above ``threshold``; ``scores`` is (T, n, n)."""
    hits = np.argwhere((scores > threshold) & mask[None])
    spans = [ScoredSpan(int(i), int(j), type_names[int(t)], float(scores[t, i, j])) for t, i, j in hits]
    spans.sort(key=lambda s: (s.start, s.end, type_names.index(s.type)))
    return Prediction(spans)


def decode_nested(scores, threshold: float = 0.0) -> Prediction:
    """All masked ``(i, j, type)`` with score > ``threshold``; a cell may carry several types."""
    return decode_cells(scores.scores, scores.mask, list(scores.types), threshold)


def decode_flat(pred: Prediction, type_order=None) -> Prediction:
    """Greedy non-overlapping subset, highest score first.

    Ties break on smaller start, then smaller end, then type order.
    """
    if type_order is None:
        type_order = sorted({s.type for s in pred.spans})
    rank = {t: k for k, t in enumerate(type_order)}
    ordered = sorted(pred.spans, key=lambda s: (-s.score, s.start, s.end, rank[s.type]))
    kept: list[ScoredSpan] = []
    for s in ordered:
        if not any(s.overlaps(k) for k in kept):
            kept.append(s)
    kept.sort(key=lambda s: (s.start, s.end))
    return Prediction(kept)
