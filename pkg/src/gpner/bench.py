"""Relative timing of scoring + decoding for each head kind."""

from __future__ import annotations

import time
import warnings

import numpy as np

from .data import EntityTypeSet, span_mask
from .decoder import decode_cells
from .heads import HEAD_KINDS, added_params, make_head, weight_count
from .rope import RotaryEncoding


def time_cell(kind: str, n: int, type_count: int, v: int, d: int, rope: bool, repeats: int, seed: int) -> float:
    """Best-of-``repeats`` seconds to score and decode one ``n``-token sentence."""
    rng = np.random.default_rng(seed)
    types = EntityTypeSet([f"T{k}" for k in range(type_count)])
    head = make_head(kind, types, v, d, rope=RotaryEncoding(d) if rope else None, rng=rng)
    h = rng.normal(size=(1, n, v))
    mask = span_mask(n, n)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        scores, _ = head.forward(h)
        decode_cells(scores[0], mask, types.names)
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(cfg: dict, v: int = 256, repeats: int = 3, lengths=(32, 64, 128, 256), type_counts=(1, 4, 10)) -> str:
    d = cfg["head.d"]
    rope = cfg["rope.enabled"]
    rows = [f"{'head':<7}{'n':>5}{'|E|':>5}{'ms/sent':>10}{'weights':>10}{'per-type':>10}"]
    for kind in HEAD_KINDS:
        for E in type_counts:
            times = []
            for n in lengths:
                sec = time_cell(kind, n, E, v, d, rope, repeats, cfg["seed"])
                times.append(sec)
                types = EntityTypeSet([f"T{k}" for k in range(E)])
                weights = weight_count(make_head(kind, types, v, d, rope=None, init="zeros").params())
                rows.append(f"{kind:<7}{n:>5}{E:>5}{sec * 1e3:>10.3f}{weights:>10d}{added_params(kind, v, d):>10d}")
            if any(b < a for a, b in zip(times, times[1:])):
                warnings.warn(f"{kind} |E|={E}: timing not monotone in n ({times})", stacklevel=2)
    return "\n".join(rows)
