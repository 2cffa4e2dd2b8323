"""The span extraction model: encoder -> head -> decoder."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import Batch, EntityTypeSet, Sentence, Vocab, make_batch
from .decoder import Prediction, decode_cells, decode_flat
from .encoder import EmbeddingEncoder, PrecomputedEmbeddings
from .heads import ScoreTensor, make_head
from .loss import batch_span_loss
from .numerics import LossGraph, Param, zero_grads
from .rope import RotaryEncoding


class SpanModel:
    def __init__(self, cfg: dict, vocab: Vocab, types: Sequence[str], embeddings: PrecomputedEmbeddings | None = None):
        self.cfg = dict(cfg)
        self.vocab = vocab
        self.types = EntityTypeSet(types)
        rng = np.random.default_rng(cfg["seed"])
        if cfg["encoder.kind"] == "precomputed":
            if embeddings is None:
                raise ValueError("encoder.kind = precomputed needs a PrecomputedEmbeddings provider")
            self.encoder = None
            self.embeddings = embeddings
            v = embeddings.dim
            if v != cfg["encoder.v"]:
                raise ValueError(f"precomputed embeddings have v={v}, config says encoder.v={cfg['encoder.v']}")
        else:
            v = cfg["encoder.v"]
            self.encoder = EmbeddingEncoder(len(vocab), v, mixing=cfg["encoder.mixing"], rng=rng, init=cfg["encoder.init"])
            self.embeddings = None
        d = cfg["head.d"]
        self.rope = RotaryEncoding(d, cfg["rope.base"]) if cfg["rope.enabled"] else None
        self.head = make_head(cfg["head.kind"], self.types, v, d, rope=self.rope, rng=rng, init=cfg["head.init"])

    @property
    def v(self) -> int:
        return self.head.v

    @property
    def d(self) -> int:
        return self.head.d

    def params(self) -> list[Param]:
        enc = self.encoder.params() if self.encoder is not None else []
        return enc + self.head.params()

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    # -- forward / backward -------------------------------------------------

    def batch(self, sentences: Sequence[Sentence]) -> Batch:
        return make_batch(sentences, self.vocab, self.cfg["head.max_span_len"])

    def represent(self, batch: Batch):
        if self.encoder is None:
            return self.embeddings.forward(batch.sentence_ids, batch.lengths, batch.width), None
        return self.encoder.forward(batch.ids, batch.token_mask)

    def forward(self, batch: Batch):
        h, enc_cache = self.represent(batch)
        scores, head_cache = self.head.forward(h)
        return scores, (enc_cache, head_cache)

    def backward(self, cache, dscores: np.ndarray) -> None:
        enc_cache, head_cache = cache
        dh = self.head.backward(head_cache, dscores)
        if self.encoder is not None:
            self.encoder.backward(enc_cache, dh)

    def loss_graph(self, batch: Batch) -> LossGraph:
        scores, cache = self.forward(batch)
        loss, dscores = batch_span_loss(
            scores, batch.label_tensor(self.types), batch.mask, self.cfg["loss.kind"], self.cfg["loss.threshold"]
        )
        return LossGraph(loss, lambda seed: self.backward(cache, seed * dscores), self.params())

    def loss(self, batch: Batch) -> float:
        scores, _ = self.forward(batch)
        loss, _ = batch_span_loss(
            scores, batch.label_tensor(self.types), batch.mask, self.cfg["loss.kind"], self.cfg["loss.threshold"]
        )
        return loss

    def zero_grad(self) -> None:
        zero_grads(self.params())

    # -- inference ----------------------------------------------------------

    def score_sentence(self, sentence: Sentence) -> ScoreTensor:
        batch = self.batch([sentence])
        scores, _ = self.forward(batch)
        return ScoreTensor(scores[0], batch.mask[0], self.types)

    def predict_batch(self, sentences: Sequence[Sentence], mode: str | None = None, threshold: float | None = None) -> list[Prediction]:
        mode = mode or self.cfg["decode.mode"]
        threshold = self.cfg["decode.threshold"] if threshold is None else threshold
        out = [Prediction([]) for _ in sentences]
        idx = [k for k, s in enumerate(sentences) if len(s)]
        if idx:
            batch = self.batch([sentences[k] for k in idx])
            scores, _ = self.forward(batch)
            for b, k in enumerate(idx):
                pred = decode_cells(scores[b], batch.mask[b], self.types.names, threshold)
                if mode == "flat":
                    pred = decode_flat(pred, self.types.names)
                out[k] = pred
        return out

    def predict(self, tokens: Sequence[str], mode: str | None = None, sentence_id: str = "0") -> Prediction:
        return self.predict_batch([Sentence(sentence_id, tuple(tokens))], mode)[0]

    def predict_corpus(self, sentences: Sequence[Sentence], batch_size: int = 64, mode: str | None = None) -> list[Prediction]:
        out: list[Prediction] = []
        for i in range(0, len(sentences), batch_size):
            out += self.predict_batch(sentences[i : i + batch_size], mode)
        return out
