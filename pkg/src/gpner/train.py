"""Adam optimisation loop and the finite-difference gradient checker."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Corpus, Sentence, Vocab, make_batches
from .evaluation import strict_f1
from .model import SpanModel
from .numerics import Param, backward, central_difference, relative_error

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    u: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Param], state: AdamState, lr: float, clip_norm: float | None = None) -> None:
    """Bias-corrected Adam update; gradients are reset afterwards."""
    state.t += 1
    scale = 1.0
    if clip_norm is not None:
        norm = math.sqrt(sum(float((p.grad**2).sum()) for p in params))
        if norm > clip_norm:
            scale = clip_norm / norm
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p in params:
        g = p.grad * scale
        m = state.m.setdefault(p.name, np.zeros_like(p.value))
        u = state.u.setdefault(p.name, np.zeros_like(p.value))
        m *= b1
        m += (1.0 - b1) * g
        u *= b2
        u += (1.0 - b2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(u / c2) + state.eps)
        p.zero_grad()


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_f1: float | None = None
    dev_f1: float | None = None
    seconds: float = 0.0


def corpus_f1(model: SpanModel, sentences: Sequence[Sentence]) -> float:
    preds = model.predict_corpus(sentences)
    gold = {str(k): s.spans for k, s in enumerate(sentences)}
    pred = {str(k): p.span_set() for k, p in enumerate(preds)}
    return strict_f1(gold, pred).micro.f1


def snapshot(model: SpanModel) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in model.params()}


def restore(model: SpanModel, values: dict[str, np.ndarray]) -> None:
    for p in model.params():
        p.value[...] = values[p.name]


def train(
    cfg: dict,
    corpus: Corpus,
    dev: Corpus | None = None,
    vocab: Vocab | None = None,
    embeddings=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[SpanModel, list[EpochRecord]]:
    """Train a fresh model on ``corpus``.

    With ``dev`` given, the returned model carries the parameters of the epoch
    with the best dev micro-F1.  ``train.target_f1`` stops training once the
    training-set micro-F1 reaches that value.
    """
    if not len(corpus):
        raise TrainingError("training corpus is empty")
    vocab = vocab or Vocab.build(corpus)
    model = SpanModel(cfg, vocab, corpus.types, embeddings=embeddings)
    state = AdamState(cfg["train.beta1"], cfg["train.beta2"], cfg["train.eps"])
    params = model.params()
    history: list[EpochRecord] = []
    best_f1, best = -1.0, None
    target = cfg["train.target_f1"]
    for epoch in range(cfg["train.epochs"]):
        start = time.perf_counter()
        losses = []
        batches = make_batches(
            corpus.sentences, cfg["train.batch_size"], cfg["seed"], vocab, epoch=epoch,
            max_span_len=cfg["head.max_span_len"],
        )
        for k, batch in enumerate(batches):
            graph = model.loss_graph(batch)
            if not math.isfinite(graph.value):
                raise TrainingError(f"non-finite loss {graph.value} at epoch {epoch}, batch {k}")
            backward(graph, params)
            adam_step(params, state, cfg["train.learning_rate"], cfg["train.clip_norm"])
            losses.append(graph.value)
        rec = EpochRecord(epoch, float(np.mean(losses)))
        if target is not None:
            rec.train_f1 = corpus_f1(model, corpus.sentences)
        if dev is not None and len(dev):
            rec.dev_f1 = corpus_f1(model, dev.sentences)
            if rec.dev_f1 > best_f1:
                best_f1, best = rec.dev_f1, snapshot(model)
        rec.seconds = time.perf_counter() - start
        history.append(rec)
        log.info("epoch %d loss %.6f train_f1 %s dev_f1 %s", epoch, rec.loss, rec.train_f1, rec.dev_f1)
        if on_epoch:
            on_epoch(rec)
        if target is not None and rec.train_f1 >= target:
            break
    if best is not None:
        restore(model, best)
    return model, history


# ---------------------------------------------------------------------------
# gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, int]
    analytic: float
    numeric: float
    checked: int

    def __str__(self) -> str:
        return (
            f"max relative error {self.max_rel_error:.3e} at {self.worst_param}{list(self.worst_index)} "
            f"(analytic {self.analytic:.10g}, numeric {self.numeric:.10g}) over {self.checked} entries"
        )


def grad_check(model: SpanModel, sample: Sequence[Sentence], h: float = 1e-5) -> GradCheckReport:
    """Compare backward gradients with central differences for every parameter entry.

    The relative error of an entry is ``|analytic - numeric| / max(|numeric|, 1e-2)``.
    """
    batch = model.batch(sample)
    model.zero_grad()
    backward(model.loss_graph(batch))
    worst = GradCheckReport(0.0, "", (0, 0), 0.0, 0.0, 0)
    checked = 0
    for p in model.params():
        analytic = p.grad.copy()
        for index in np.ndindex(p.value.shape):
            numeric = central_difference(lambda: model.loss(batch), p.value, index, h)
            err = relative_error(float(analytic[index]), numeric)
            checked += 1
            if err > worst.max_rel_error or not worst.worst_param:
                worst = GradCheckReport(err, p.name, tuple(int(i) for i in index), float(analytic[index]), numeric, 0)
    model.zero_grad()
    worst.checked = checked
    return worst
