"""Token representations: a trainable embedding encoder and precomputed vectors."""

from __future__ import annotations

import math
import re
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import DTYPE, DimensionError, Param, affine, affine_backward


class EmbeddingEncoder:
    """Embedding lookup followed by an optional affine mix of each token's
    ``[prev; self; next]`` window (zeros outside the sentence).

    The PAD row of the table stays at zero and receives no gradient, so padded
    positions act as the zero edge padding of shorter sentences in a batch.
    """

    def __init__(self, vocab_size: int, dim: int, mixing: bool = True, rng=None, init: str = "uniform"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab_size = vocab_size
        self.dim = dim
        self.mixing = mixing
        if init == "zeros":
            table = np.zeros((vocab_size, dim))
            wc = np.zeros((3 * dim, dim))
        else:
            bound = 0.5 / math.sqrt(dim)
            table = rng.uniform(-bound, bound, size=(vocab_size, dim))
            wb = math.sqrt(6.0 / (4 * dim))
            wc = rng.uniform(-wb, wb, size=(3 * dim, dim))
        table[0] = 0.0
        self.table = Param("encoder.embedding", table)
        self.w_mix = Param("encoder.mix.W", wc)
        self.b_mix = Param("encoder.mix.b", np.zeros((1, dim)), kind="bias")

    def params(self) -> list[Param]:
        if self.mixing:
            return [self.table, self.w_mix, self.b_mix]
        return [self.table]

    def forward(self, ids: np.ndarray, token_mask: np.ndarray):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            bad = np.argwhere((ids < 0) | (ids >= self.vocab_size))[0]
            raise IndexError(f"token id out of range at position {tuple(int(x) for x in bad)}")
        e = self.table.value[ids] * token_mask[..., None]
        if not self.mixing:
            return e, (ids, token_mask, None)
        window = _window(e)
        h = affine(window, self.w_mix.value, self.b_mix.value)
        return h, (ids, token_mask, window)

    def backward(self, cache, dh: np.ndarray) -> None:
        ids, token_mask, window = cache
        if window is None:
            de = dh
        else:
            dwin, dw, db = affine_backward(window, self.w_mix.value, dh)
            self.w_mix.accumulate(dw)
            self.b_mix.accumulate(db)
            v = self.dim
            de = dwin[..., v : 2 * v].copy()
            de[..., :-1, :] += dwin[..., 1:, :v]  # e[i] was the "prev" of row i+1
            de[..., 1:, :] += dwin[..., :-1, 2 * v :]  # e[i] was the "next" of row i-1
        de = de * token_mask[..., None]
        grad = np.zeros_like(self.table.value)
        np.add.at(grad, ids.reshape(-1), de.reshape(-1, self.dim))
        self.table.accumulate(grad)


def _window(e: np.ndarray) -> np.ndarray:
    prev = np.zeros_like(e)
    prev[..., 1:, :] = e[..., :-1, :]
    nxt = np.zeros_like(e)
    nxt[..., :-1, :] = e[..., 1:, :]
    return np.concatenate([prev, e, nxt], axis=-1)


def encode(tokens: Sequence[int], enc: EmbeddingEncoder) -> np.ndarray:
    """Representation matrix (n x v) of a single token-id sequence."""
    ids = np.asarray(tokens, dtype=np.int64)[None, :]
    for pos, t in enumerate(ids[0]):
        if not 0 <= t < enc.vocab_size:
            raise IndexError(f"token id {int(t)} at position {pos} outside vocabulary of size {enc.vocab_size}")
    h, _ = enc.forward(ids, np.ones(ids.shape, dtype=bool))
    return h[0]


# ---------------------------------------------------------------------------
# precomputed vectors

_HEADER = re.compile(r"^#emb v=(\d+)$")
_SENT = re.compile(r"^>s (\S+) n=(\d+)$")


class PrecomputedEmbeddings:
    """Sentence id -> (n x v) matrix, typically exported from an external model."""

    def __init__(self, dim: int, matrices: dict[str, np.ndarray] | None = None):
        self.dim = dim
        self.matrices = dict(matrices or {})

    def __len__(self) -> int:
        return len(self.matrices)

    def __contains__(self, sid) -> bool:
        return sid in self.matrices

    def get(self, sid: str, length: int | None = None) -> np.ndarray:
        try:
            m = self.matrices[sid]
        except KeyError:
            raise KeyError(f"no precomputed embeddings for sentence {sid!r}") from None
        if length is not None and m.shape[0] != length:
            raise DimensionError(f"sentence {sid}: embeddings have {m.shape[0]} rows, sentence has {length} tokens")
        return m

    def validate(self, sentences) -> None:
        for s in sentences:
            self.get(s.id, len(s))

    def forward(self, sentence_ids: Sequence[str], lengths: Sequence[int], width: int) -> np.ndarray:
        out = np.zeros((len(sentence_ids), width, self.dim), dtype=DTYPE)
        for b, (sid, n) in enumerate(zip(sentence_ids, lengths)):
            out[b, :n] = self.get(sid, int(n))
        return out


def write_precomputed(emb: PrecomputedEmbeddings, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#emb v={emb.dim}\n")
        for sid, m in emb.matrices.items():
            fh.write(f">s {sid} n={m.shape[0]}\n")
            for row in m:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_precomputed(path, dim: int | None = None, sentences=None) -> PrecomputedEmbeddings:
    """Parse the ``#emb`` text format; validate against ``dim`` and ``sentences`` if given."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        return PrecomputedEmbeddings(dim or 0)
    m = _HEADER.match(lines[0])
    if not m:
        raise ValueError(f"{path}:1: expected header '#emb v=<dims>'")
    v = int(m.group(1))
    if dim is not None and v != dim:
        raise DimensionError(f"{path}: file has v={v}, expected v={dim}")
    matrices: dict[str, np.ndarray] = {}
    k = 1
    while k < len(lines):
        sm = _SENT.match(lines[k])
        if not sm:
            raise ValueError(f"{path}:{k + 1}: expected '>s <id> n=<len>'")
        sid, n = sm.group(1), int(sm.group(2))
        rows = lines[k + 1 : k + 1 + n]
        if len(rows) != n:
            raise DimensionError(f"sentence {sid}: expected {n} rows, file ends after {len(rows)}")
        mat = np.empty((n, v), dtype=DTYPE)
        for r, row in enumerate(rows):
            vals = row.split()
            if len(vals) != v:
                raise DimensionError(f"sentence {sid}: row {r} has {len(vals)} values, expected v={v}")
            mat[r] = [float(x) for x in vals]
        matrices[sid] = mat
        k += 1 + n
    emb = PrecomputedEmbeddings(v, matrices)
    if sentences is not None:
        emb.validate(sentences)
    return emb
