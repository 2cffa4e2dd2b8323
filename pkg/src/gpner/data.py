"""Corpus model, file formats, BIO conversion, batching and a synthetic corpus."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK = 0, 1


class CorpusError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Span:
    """Entity mention; ``end`` is inclusive."""

    start: int
    end: int
    type: str

    def length(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "Span") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[str, ...]
    spans: frozenset[Span] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "spans", frozenset(self.spans))
        n = len(self.tokens)
        for s in self.spans:
            if not (0 <= s.start <= s.end < n):
                raise CorpusError(
                    f"sentence {self.id}: span ({s.start}, {s.end}, {s.type}) out of range for length {n}"
                )

    def __len__(self) -> int:
        return len(self.tokens)

    def sorted_spans(self) -> list[Span]:
        return sorted(self.spans)


@dataclass
class Corpus:
    sentences: list[Sentence]
    types: list[str] = field(default_factory=list)
    split: str = "train"

    def __post_init__(self) -> None:
        if not self.types:
            self.types = sorted({s.type for sent in self.sentences for s in sent.spans})

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)


class EntityTypeSet:
    """Ordered, fixed list of entity type names."""

    def __init__(self, names: Iterable[str]):
        self.names = list(names)
        if any(not n for n in self.names):
            raise ValueError("entity type names must be nonempty")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate entity type names in {self.names}")
        self._index = {n: i for i, n in enumerate(self.names)}

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown entity type {name!r}") from None

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name) -> bool:
        return name in self._index


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = ["<pad>", "<unk>"]
        self.stoi = {"<pad>": PAD, "<unk>": UNK}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, corpus: Iterable[Sentence]) -> "Vocab":
        v = cls()
        for sent in corpus:
            for t in sent.tokens:
                v.add(t)
        return v

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def __len__(self) -> int:
        return len(self.itos)


# ---------------------------------------------------------------------------
# JSONL


def _sentence_from_obj(obj, sid: str) -> tuple[Sentence, int]:
    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise CorpusError(f"sentence {sid}: tokens must be a list of strings")
    seen: set[Span] = set()
    dupes = 0
    for e in obj.get("entities", []):
        span = Span(int(e["start"]), int(e["end"]), str(e["type"]))
        if span in seen:
            dupes += 1
        seen.add(span)
    return Sentence(str(obj.get("id", sid)), tokens, seen), dupes


def read_jsonl(path, split: str = "train") -> Corpus:
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "tokens" not in obj:
                raise CorpusError(f"{path}:{lineno}: expected an object with 'tokens'")
            try:
                sent, dupes = _sentence_from_obj(obj, str(len(sentences)))
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, CorpusError):
                    raise
                raise CorpusError(f"{path}:{lineno}: malformed entity ({exc})") from None
            if dupes:
                log.warning("sentence %s: collapsed %d duplicate entities", sent.id, dupes)
            sentences.append(sent)
    return Corpus(sentences, split=split)


def sentence_to_obj(sent: Sentence) -> dict:
    return {
        "id": sent.id,
        "tokens": list(sent.tokens),
        "entities": [{"start": s.start, "end": s.end, "type": s.type} for s in sent.sorted_spans()],
    }


def write_jsonl(corpus: Iterable[Sentence], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in corpus:
            fh.write(json.dumps(sentence_to_obj(sent), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# BIO


def bio_to_spans(tags: Sequence[str], strict: bool = False) -> tuple[set[Span], int]:
    """Convert BIO tags to spans.

    Orphan ``I-X`` tags (not continuing an ``X`` run) start a new run when
    ``strict`` is false and raise :class:`CorpusError` otherwise.  Returns the
    spans and the number of repaired orphans.
    """
    spans: set[Span] = set()
    start, cur = None, None
    orphans = 0

    def close(end):
        if cur is not None:
            spans.add(Span(start, end, cur))

    for i, tag in enumerate(tags):
        if tag == "O":
            close(i - 1)
            start, cur = None, None
            continue
        prefix, sep, typ = tag.partition("-")
        if not sep or prefix not in ("B", "I") or not typ:
            raise CorpusError(f"malformed BIO tag {tag!r} at position {i}")
        if prefix == "I" and cur == typ:
            continue
        if prefix == "I":
            if strict:
                raise CorpusError(f"orphan tag {tag!r} at position {i}")
            orphans += 1
        close(i - 1)
        start, cur = i, typ
    close(len(tags) - 1)
    return spans, orphans


def spans_to_bio(spans: Iterable[Span], n: int) -> list[str]:
    ordered = sorted(spans)
    for a, b in zip(ordered, ordered[1:]):
        if a.overlaps(b):
            raise CorpusError(f"overlapping spans cannot be BIO-encoded: {a} and {b}")
    tags = ["O"] * n
    for s in ordered:
        if not (0 <= s.start <= s.end < n):
            raise CorpusError(f"span {s} out of range for length {n}")
        tags[s.start] = f"B-{s.type}"
        for i in range(s.start + 1, s.end + 1):
            tags[i] = f"I-{s.type}"
    return tags


def read_conll_bio(path, strict: bool = False, split: str = "train") -> Corpus:
    sentences: list[Sentence] = []
    tokens: list[str] = []
    tags: list[str] = []
    repaired = 0

    def flush():
        nonlocal repaired
        if tokens:
            spans, orphans = bio_to_spans(tags, strict=strict)
            repaired += orphans
            sentences.append(Sentence(str(len(sentences)), tokens, spans))
            tokens.clear()
            tags.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                continue
            parts = line.split()
            if len(parts) != 2:
                raise CorpusError(f"{path}:{lineno}: expected 'token TAG', got {line!r}")
            tokens.append(parts[0])
            tags.append(parts[1])
        try:
            flush()
        except CorpusError as exc:
            raise CorpusError(f"{path}: {exc}") from None
    if repaired:
        log.warning("%s: repaired %d orphan I- tags as B-", path, repaired)
    return Corpus(sentences, split=split)


def write_conll_bio(corpus: Iterable[Sentence], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in corpus:
            for tok, tag in zip(sent.tokens, spans_to_bio(sent.spans, len(sent))):
                fh.write(f"{tok} {tag}\n")
            fh.write("\n")


def read_corpus(path, split: str = "train") -> Corpus:
    """Dispatch on extension: ``.jsonl``/``.json`` are span JSONL, else CoNLL BIO."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"corpus not found: {p}")
    if p.suffix in (".jsonl", ".json"):
        return read_jsonl(p, split=split)
    return read_conll_bio(p, split=split)


# ---------------------------------------------------------------------------
# batching


def span_mask(n: int, length: int, max_span_len: int | None = None) -> np.ndarray:
    """Valid ``(i, j)`` cells: ``i <= j < length`` and optionally ``j-i+1 <= cap``."""
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    m = (i <= j) & (j < length)
    if max_span_len is not None:
        m &= (j - i + 1) <= max_span_len
    return m


@dataclass
class Batch:
    ids: np.ndarray  # (B, n) int, PAD-filled
    lengths: np.ndarray  # (B,)
    labels: list[frozenset[Span]]
    mask: np.ndarray  # (B, n, n) bool
    sentence_ids: list[str]

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])

    @property
    def width(self) -> int:
        return int(self.ids.shape[1])

    @property
    def token_mask(self) -> np.ndarray:
        return np.arange(self.width)[None, :] < self.lengths[:, None]

    def label_tensor(self, types: EntityTypeSet) -> np.ndarray:
        """(B, T, n, n) boolean positives; rejects labels outside the mask."""
        out = np.zeros((self.size, len(types), self.width, self.width), dtype=bool)
        for b, spans in enumerate(self.labels):
            for s in spans:
                if not (0 <= s.start <= s.end < self.width) or not self.mask[b, s.start, s.end]:
                    raise CorpusError(
                        f"sentence {self.sentence_ids[b]}: label ({s.start}, {s.end}, {s.type}) "
                        "lies outside the valid span mask"
                    )
                out[b, types.index(s.type), s.start, s.end] = True
        return out


def make_batch(sentences: Sequence[Sentence], vocab: Vocab, max_span_len: int | None = None) -> Batch:
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    n = int(lengths.max()) if len(sentences) else 0
    ids = np.full((len(sentences), n), PAD, dtype=np.int64)
    for b, s in enumerate(sentences):
        ids[b, : len(s)] = vocab.encode(s.tokens)
    mask = np.stack([span_mask(n, L, max_span_len) for L in lengths]) if len(sentences) else np.zeros((0, 0, 0), bool)
    return Batch(ids, lengths, [s.spans for s in sentences], mask, [s.id for s in sentences])


def make_batches(
    corpus: Sequence[Sentence],
    batch_size: int,
    seed: int,
    vocab: Vocab,
    epoch: int = 0,
    shuffle: bool = True,
    max_span_len: int | None = None,
) -> list[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    sentences = list(corpus)
    order = list(range(len(sentences)))
    if shuffle:
        # epoch mixed into the seed so every epoch sees a different, reproducible order
        random.Random(seed * 1_000_003 + epoch).shuffle(order)
    return [
        make_batch([sentences[k] for k in order[i : i + batch_size]], vocab, max_span_len)
        for i in range(0, len(order), batch_size)
    ]


# ---------------------------------------------------------------------------
# synthetic corpus

_TYPE_NAMES = ["PER", "LOC", "ORG", "MISC", "DATE", "TIME", "NUM", "EVT", "PRD", "LAW"]


def synth_type_names(type_count: int) -> list[str]:
    if type_count <= len(_TYPE_NAMES):
        return _TYPE_NAMES[:type_count]
    return [f"T{k}" for k in range(type_count)]


def synth_corpus(
    seed: int,
    n_sentences: int,
    type_count: int,
    nested: bool,
    filler_vocab: int = 30,
    min_entity_len: int = 2,
    max_entity_len: int = 8,
    nest_rate: float = 0.3,
) -> Corpus:
    """Deterministic toy corpus whose labels are recoverable from the surface.

    Every entity opens with a type-specific trigger ``<X`` and closes with
    ``X>``; interior and background tokens are drawn from a shared filler
    vocabulary.  Each type occurs at most once per sentence, so the pairing
    of triggers is unambiguous.  With ``nested`` set, ``nest_rate`` of the
    sentences place one entity strictly inside another of a different type.
    """
    if type_count < 1:
        raise ValueError("type_count must be >= 1")
    rng = random.Random(seed)
    names = synth_type_names(type_count)
    fillers = [f"w{k}" for k in range(filler_vocab)]

    def filler(k):
        return [rng.choice(fillers) for _ in range(k)]

    def entity(typ, inner=None):
        if inner is None:
            body = filler(rng.randint(min_entity_len, max_entity_len) - 2)
            return [f"<{typ}"] + body + [f"{typ}>"], []
        inner_toks, _ = inner
        left, right = filler(rng.randint(0, 2)), filler(rng.randint(0, 2))
        if not left and not right:
            left = filler(1)
        toks = [f"<{typ}"] + left + inner_toks + right + [f"{typ}>"]
        return toks, [(1 + len(left), len(inner_toks))]

    sentences = []
    for sid in range(n_sentences):
        k = rng.randint(1, type_count) if type_count > 1 else 1
        chosen = rng.sample(names, k)
        pieces = []  # (tokens, [(relative start, length) of inner spans], types)
        nest = nested and len(chosen) >= 2 and rng.random() < nest_rate
        if nest:
            outer, inner_t = chosen[0], chosen[1]
            inner = entity(inner_t)
            toks, inner_pos = entity(outer, inner)
            pieces.append((toks, [(0, len(toks), outer), (inner_pos[0][0], inner_pos[0][1], inner_t)]))
            chosen = chosen[2:]
        for typ in chosen:
            toks, _ = entity(typ)
            pieces.append((toks, [(0, len(toks), typ)]))
        rng.shuffle(pieces)
        tokens: list[str] = filler(rng.randint(0, 3))
        spans = set()
        for toks, local in pieces:
            base = len(tokens)
            for off, ln, typ in local:
                spans.add(Span(base + off, base + off + ln - 1, typ))
            tokens += toks
            tokens += filler(rng.randint(1, 3))
        sentences.append(Sentence(f"synth-{seed}-{sid}", tokens, spans))
    return Corpus(sentences, types=names)


def is_properly_nested(outer: Span, inner: Span) -> bool:
    return (
        outer.start <= inner.start
        and inner.end <= outer.end
        and (outer.start < inner.start or inner.end < outer.end)
    )


def nested_pairs(spans: Iterable[Span]) -> list[tuple[Span, Span]]:
    spans = list(spans)
    return [(a, b) for a in spans for b in spans if a != b and is_properly_nested(a, b)]
