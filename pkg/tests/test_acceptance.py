"""End-to-end acceptance checks.

Each test prints one ``[PASS]``/``[FAIL]`` line; the lines are also
collected and repeated in the terminal summary (see conftest.py), so a plain
``pytest tests/test_acceptance.py`` shows the verdicts.  Criterion 10 is
report-only: a miss emits a warning and the test still passes.
"""

from __future__ import annotations

import itertools
import math
import random
import time
import warnings

import numpy as np
import pytest

from gpner import checkpoint, config
from gpner.cli import gradcheck_sample, main
from gpner.data import (
    EntityTypeSet,
    Span,
    Vocab,
    bio_to_spans,
    nested_pairs,
    read_jsonl,
    span_mask,
    spans_to_bio,
    synth_corpus,
    write_jsonl,
)
from gpner.decoder import Prediction, ScoredSpan, decode_flat, decode_nested
from gpner.evaluation import bucket_report, strict_f1
from gpner.heads import ScoreTensor, added_params, make_head, weight_count
from gpner.loss import (
    multilabel_loss,
    multilabel_loss_grad,
    multilabel_loss_threshold,
    multilabel_loss_threshold_naive,
)
from gpner.model import SpanModel
from gpner.rope import RotaryEncoding, rotate
from gpner.train import grad_check, train

RESULTS: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    RESULTS.append(line)
    print(line)


# 1 ------------------------------------------------------------------------


def test_c1_rope_relative_property():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for d in (8, 64):
        enc = RotaryEncoding(d)
        for _ in range(100):
            q, k = rng.normal(size=d), rng.normal(size=d)
            i = int(rng.integers(0, 128))
            j = int(rng.integers(i, 128))
            lhs = rotate(enc, q, i) @ rotate(enc, k, j)
            rhs = q @ rotate(enc, k, j - i)
            worst = max(worst, abs(lhs - rhs))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 1.0
    report(1, ok, f"rope relative property, max |diff| {worst:.2e} (<= 1e-6), {elapsed:.3f}s (< 1s)")
    assert ok


# 2 ------------------------------------------------------------------------


def test_c2_gradient_correctness():
    t0 = time.perf_counter()
    sample = gradcheck_sample(seed=11)
    assert max(len(s) for s in sample) <= 6
    assert len(sample.types) == 2
    worst = {}
    for kind, rope in itertools.product(("gp", "egp", "egp-h"), (True, False)):
        cfg = config.resolve(overrides={"head.kind": kind, "rope.enabled": rope, "encoder.v": 8, "head.d": 4, "seed": 5})
        model = SpanModel(cfg, Vocab.build(sample), sample.types)
        rep = grad_check(model, sample, h=1e-5)
        assert rep.checked == sum(p.size for p in model.params())
        worst[f"{kind}/rope={'on' if rope else 'off'}"] = rep.max_rel_error
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    ok = top <= 1e-4 and elapsed < 30.0
    report(2, ok, f"grad_check over 6 head configs, max rel err {top:.2e} (<= 1e-4), {elapsed:.1f}s (< 30s)")
    assert ok, worst


# 3 ------------------------------------------------------------------------


def test_c3_loss_identities():
    rng = np.random.default_rng(202)
    worst_a = 0.0
    for _ in range(1000):
        pos = rng.normal(scale=5.0, size=int(rng.integers(0, 8)))
        neg = rng.normal(scale=5.0, size=int(rng.integers(0, 40)))
        worst_a = max(worst_a, abs(multilabel_loss_threshold(pos, neg, 0.0) - multilabel_loss(pos, neg)))
    worst_b = 0.0
    for p_len, n_len in itertools.product(range(7), range(7)):
        for _ in range(5):
            pos = rng.normal(scale=3.0, size=p_len)
            neg = rng.normal(scale=3.0, size=n_len)
            t = float(rng.normal())
            worst_b = max(
                worst_b, abs(multilabel_loss_threshold(pos, neg, t) - multilabel_loss_threshold_naive(pos, neg, t))
            )
    empty = multilabel_loss([], [])
    single = multilabel_loss([0.0], [])
    signs_ok = True
    for _ in range(200):
        pos = rng.normal(size=int(rng.integers(1, 6)))
        neg = rng.normal(size=int(rng.integers(1, 6)))
        gp, gn = multilabel_loss_grad(pos, neg)
        signs_ok &= bool((gn > 0).all() and (gp < 0).all())
    checks = {
        "a": worst_a <= 1e-12,
        "b": worst_b <= 1e-10,
        "c": empty == 0.0,
        "d": abs(single - math.log(2)) <= 1e-12,
        "e": signs_ok,
    }
    ok = all(checks.values())
    report(
        3, ok,
        f"loss identities a={worst_a:.1e} b={worst_b:.1e} c={empty!r} d={abs(single - math.log(2)):.1e} e={signs_ok}",
    )
    assert ok, checks


# 4 ------------------------------------------------------------------------


def _overfit(kind: str, nested: bool):
    corpus = synth_corpus(7, 200, 3, nested=nested)
    cfg = config.resolve(
        overrides={
            "train.preset": "synthetic",
            "head.kind": kind,
            "decode.mode": "nested" if nested else "flat",
            "train.target_f1": 0.99,
            "seed": 1,
        }
    )
    t0 = time.perf_counter()
    model, history = train(cfg, corpus)
    elapsed = time.perf_counter() - t0
    preds = model.predict_corpus(corpus.sentences)
    gold = [s.spans for s in corpus.sentences]
    pred = [p.span_set() for p in preds]
    f1 = strict_f1(gold, pred).micro.f1
    hit_pairs = sum(len(nested_pairs(set(g) & set(p))) for g, p in zip(gold, pred))
    return f1, len(history), elapsed, hit_pairs


@pytest.mark.parametrize("kind", ["gp", "egp"])
@pytest.mark.parametrize("nested", [False, True], ids=["flat", "nested"])
def test_c4_desk_scale_learnability(kind, nested):
    f1, epochs, elapsed, pairs = _overfit(kind, nested)
    ok = f1 >= 0.99 and epochs <= 200 and elapsed < 300.0
    if nested:
        ok = ok and pairs >= 1
    variant = "nested" if nested else "flat"
    extra = f", {pairs} nested pairs recovered" if nested else ""
    report(4, ok, f"{kind}/{variant} train micro-F1 {f1:.4f} (>= 0.99) after {epochs} epochs, {elapsed:.1f}s{extra}")
    assert ok


# 5 ------------------------------------------------------------------------


def test_c5_parameter_accounting():
    want = {"gp": 98304, "egp": 256, "egp-h": 1536}
    got = {k: added_params(k, 768, 64) for k in want}
    deltas = {}
    for kind in want:
        counts = []
        for E in (3, 4):
            types = EntityTypeSet([f"T{k}" for k in range(E)])
            head = make_head(kind, types, 768, 64, rope=RotaryEncoding(64), init="zeros")
            counts.append(weight_count(head.params()))
        deltas[kind] = counts[1] - counts[0]
    ok = got == want and deltas == want
    report(5, ok, f"added params {got}, |E|+1 weight deltas {deltas}")
    assert ok


# 6 ------------------------------------------------------------------------


def _reference_greedy(spans: list[ScoredSpan], order: list[str]) -> set[tuple]:
    rank = {t: r for r, t in enumerate(order)}
    chosen: list[ScoredSpan] = []
    for s in sorted(spans, key=lambda x: (-x.score, x.start, x.end, rank[x.type])):
        if all(s.end < c.start or c.end < s.start for c in chosen):
            chosen.append(s)
    return {(c.start, c.end, c.type) for c in chosen}


def test_c6_decoding_oracle():
    rng = np.random.default_rng(303)
    types = EntityTypeSet(["A", "B", "C"])
    nested_ok = 0
    for _ in range(50):
        s = rng.normal(size=(3, 6, 6))
        mask = span_mask(6, int(rng.integers(1, 7)))
        got = {(x.start, x.end, x.type) for x in decode_nested(ScoreTensor(s, mask, types)).spans}
        want = {
            (i, j, types.names[a])
            for a in range(3)
            for i in range(6)
            for j in range(6)
            if mask[i, j] and s[a, i, j] > 0
        }
        nested_ok += got == want
    flat_ok = 0
    for _ in range(100):
        n = int(rng.integers(1, 10))
        spans = []
        for _ in range(int(rng.integers(0, 12))):
            i = int(rng.integers(0, n))
            j = int(rng.integers(i, n))
            # coarse scores make ties common so the tie-break is exercised
            spans.append(ScoredSpan(i, j, types.names[int(rng.integers(0, 3))], float(rng.integers(1, 4))))
        spans = list({(x.start, x.end, x.type): x for x in spans}.values())
        out = decode_flat(Prediction(spans), types.names).spans
        keys = {(x.start, x.end, x.type) for x in out}
        free = all(not a.overlaps(b) for a, b in itertools.combinations(out, 2))
        subset = keys <= {(x.start, x.end, x.type) for x in spans}
        flat_ok += free and subset and keys == _reference_greedy(spans, types.names)
    ok = nested_ok == 50 and flat_ok == 100
    report(6, ok, f"nested decode matches enumeration {nested_ok}/50, flat greedy matches reference {flat_ok}/100")
    assert ok


# 7 ------------------------------------------------------------------------


def _random_flat_labeling(rnd: random.Random, n: int, names: list[str]) -> set[Span]:
    spans, i = set(), 0
    while i < n:
        if rnd.random() < 0.4:
            j = min(n - 1, i + rnd.randrange(3))
            spans.add(Span(i, j, rnd.choice(names)))
            i = j + 1
        else:
            i += 1
    return spans


def test_c7_round_trips(tmp_path):
    corpus = synth_corpus(13, 50, 3, nested=True)
    path = tmp_path / "rt.jsonl"
    write_jsonl(corpus, path)
    back = read_jsonl(path)
    jsonl_ok = [(s.id, s.tokens, s.spans) for s in back.sentences] == [
        (s.id, s.tokens, s.spans) for s in corpus.sentences
    ]

    rnd = random.Random(17)
    bio_ok = 0
    for _ in range(100):
        n = rnd.randrange(0, 15)
        spans = _random_flat_labeling(rnd, n, ["PER", "LOC", "ORG"])
        recovered, orphans = bio_to_spans(spans_to_bio(spans, n), strict=True)
        bio_ok += recovered == spans and orphans == 0

    cfg = config.resolve(overrides={"encoder.v": 16, "head.d": 8, "seed": 2, "train.preset": "synthetic", "train.epochs": 2})
    model, _ = train(cfg, corpus)
    ckpt = tmp_path / "m.ckpt"
    checkpoint.save(model, ckpt)
    loaded = checkpoint.load(ckpt)
    batch = model.batch(corpus.sentences[:8])
    a, _ = model.forward(batch)
    b, _ = loaded.forward(batch)
    bitwise = a.tobytes() == b.tobytes()
    same_preds = [p.spans for p in model.predict_corpus(corpus.sentences)] == [
        p.spans for p in loaded.predict_corpus(corpus.sentences)
    ]
    ok = jsonl_ok and bio_ok == 100 and bitwise and same_preds
    report(7, ok, f"jsonl identity {jsonl_ok}, bio identity {bio_ok}/100, checkpoint bitwise scores {bitwise}")
    assert ok


# 8 ------------------------------------------------------------------------


def _random_sets(rnd: random.Random, n: int) -> set[Span]:
    out = set()
    for _ in range(rnd.randrange(0, 5)):
        i = rnd.randrange(n)
        out.add(Span(i, rnd.randrange(i, n), rnd.choice("XYZ")))
    return out


def test_c8_evaluator():
    gold = {"s": {Span(0, 1, "PER"), Span(3, 3, "LOC")}}
    pred = {"s": {Span(0, 1, "PER"), Span(2, 3, "LOC")}}
    micro = strict_f1(gold, pred).micro
    hand_ok = micro.precision == 0.5 and micro.recall == 0.5 and micro.f1 == 0.5

    rnd = random.Random(23)
    oracle_ok = 0
    conserve_ok = True
    for _ in range(200):
        n = rnd.randrange(1, 12)
        g = {str(k): _random_sets(rnd, n) for k in range(4)}
        p = {str(k): _random_sets(rnd, n) for k in range(4)}
        tp = sum(len(g[k] & p[k]) for k in g)
        fp = sum(len(p[k] - g[k]) for k in g)
        fn = sum(len(g[k] - p[k]) for k in g)
        m = strict_f1(g, p).micro
        oracle_ok += (m.counts.tp, m.counts.fp, m.counts.fn) == (tp, fp, fn)
        lengths = {k: n for k in g}
        for axis in ("sentence_length", "entity_length", "density"):
            buckets = bucket_report(g, p, axis, lengths)
            totals = tuple(sum(getattr(r.micro.counts, f) for r in buckets.values()) for f in ("tp", "fp", "fn"))
            conserve_ok &= totals == (tp, fp, fn)
    ok = hand_ok and oracle_ok == 200 and conserve_ok
    report(8, ok, f"hand case P=R=F1=0.5 {hand_ok}, oracle counts {oracle_ok}/200, bucket totals conserved {conserve_ok}")
    assert ok


# 9 ------------------------------------------------------------------------


def test_c9_determinism(tmp_path):
    data = tmp_path / "train.jsonl"
    write_jsonl(synth_corpus(7, 60, 3, nested=True), data)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 4\n\n[train]\npreset = synthetic\nepochs = 4\n\n[encoder]\nv = 16\n\n[head]\nd = 8\n")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(cfg), "--train", str(data), "--out-dir", str(out)]) == 0
        outs.append(out)
    same_log = (outs[0] / "metrics.tsv").read_bytes() == (outs[1] / "metrics.tsv").read_bytes()
    same_ckpt = (outs[0] / "model.ckpt").read_bytes() == (outs[1] / "model.ckpt").read_bytes()
    ok = same_log and same_ckpt
    report(9, ok, f"two train runs: identical loss log {same_log}, identical checkpoint {same_ckpt}")
    assert ok


# 10 -----------------------------------------------------------------------


def _epochs_to_target(seed: int, rope: bool, corpus) -> int | None:
    cfg = config.resolve(
        overrides={
            "train.preset": "synthetic",
            "head.kind": "gp",
            "rope.enabled": rope,
            "train.target_f1": 0.99,
            "seed": seed,
        }
    )
    _, history = train(cfg, corpus)
    last = history[-1]
    return len(history) if last.train_f1 >= 0.99 else None


def test_c10_rope_ablation_direction():
    corpus = synth_corpus(7, 200, 3, nested=True, min_entity_len=3, max_entity_len=10)
    assert any(sp.length() >= 6 for s in corpus.sentences for sp in s.spans)
    wins, rows = 0, []
    for seed in range(1, 6):
        on = _epochs_to_target(seed, True, corpus)
        off = _epochs_to_target(seed, False, corpus)
        win = on is not None and (off is None or on <= off)
        wins += win
        rows.append(f"seed {seed}: rope {on} vs none {off}")
    ok = wins >= 3
    report(10, ok, f"rope reaches target no later in {wins}/5 seeds (soft, >= 3): " + "; ".join(rows))
    if not ok:
        warnings.warn(f"rope ablation direction not observed: {rows}", stacklevel=1)
