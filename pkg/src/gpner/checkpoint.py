"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic      8 bytes  b"GPNERCKP"
    version    u32      FORMAT_VERSION
    config     u32 length + UTF-8 JSON of the resolved config
    vocab      u32 length + UTF-8 JSON list of tokens (index = id)
    types      u32 length + UTF-8 JSON list of entity type names
    count      u32      number of tensors
    tensors    per tensor: u16 name length, UTF-8 name, u8 kind (0 weight,
               1 bias), u32 rows, u32 cols, rows*cols float64 values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import Vocab
from .model import SpanModel

MAGIC = b"GPNERCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _blob(obj) -> bytes:
    raw = json.dumps(obj, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def to_bytes(model: SpanModel) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(_blob(model.cfg))
    parts.append(_blob(model.vocab.itos))
    parts.append(_blob(model.types.names))
    params = model.params()
    parts.append(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        rows, cols = p.value.shape
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<BII", 0 if p.kind == "weight" else 1, rows, cols))
        parts.append(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return b"".join(parts)


def save(model: SpanModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self):
        (n,) = self.unpack("<I")
        return json.loads(self.take(n).decode("utf-8"))


def _open(data: bytes) -> _Reader:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    return r


def peek_config(data: bytes) -> dict:
    return _open(data).blob()


def from_bytes(data: bytes, embeddings=None) -> SpanModel:
    r = _open(data)
    cfg = r.blob()
    vocab = Vocab()
    itos = r.blob()
    if itos[:2] != vocab.itos:
        raise CheckpointError("vocabulary does not start with the reserved PAD/UNK tokens")
    for tok in itos[2:]:
        vocab.add(tok)
    types = r.blob()
    model = SpanModel(cfg, vocab, types, embeddings=embeddings)
    named = model.named_params()
    (count,) = r.unpack("<I")
    seen = set()
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        _kind, rows, cols = r.unpack("<BII")
        values = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(rows, cols)
        if name not in named:
            raise CheckpointError(f"checkpoint tensor {name!r} does not belong to the configured model")
        if named[name].value.shape != (rows, cols):
            raise CheckpointError(
                f"tensor {name}: checkpoint shape {(rows, cols)} != model shape {named[name].value.shape}"
            )
        named[name].value[...] = values
        seen.add(name)
    missing = set(named) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors {sorted(missing)}")
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after tensor directory")
    return model


def load(path, embeddings=None) -> SpanModel:
    return from_bytes(Path(path).read_bytes(), embeddings=embeddings)
