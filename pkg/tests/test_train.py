import math

import numpy as np
import pytest

from conftest import small_cfg
from gpner import checkpoint
from gpner.data import Sentence, Vocab, make_batch, synth_corpus
from gpner.model import SpanModel
from gpner.numerics import Param, backward, half_sq_norm_loss
from gpner.train import AdamState, TrainingError, adam_step, grad_check, train


def test_adam_zero_grad_keeps_params():
    p = Param("w", np.array([[1.0, -2.0]]))
    st = AdamState()
    adam_step([p], st, 0.1)
    assert st.t == 1 and np.array_equal(p.value, [[1.0, -2.0]])


def test_adam_first_step_is_lr():
    p = Param("w", np.array([[0.0]]))
    p.grad[...] = 1.0
    adam_step([p], AdamState(), 0.01)
    assert p.value[0, 0] == pytest.approx(-0.01, rel=1e-6)
    assert p.grad[0, 0] == 0.0


def scalar_adam(w, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = u = 0.0
    traj = []
    for t in range(1, steps + 1):
        g = w
        m = b1 * m + (1 - b1) * g
        u = b2 * u + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (math.sqrt(u / (1 - b2**t)) + eps)
        traj.append(w)
    return traj


def test_adam_quadratic_vs_scalar_reference():
    p = Param("w", np.array([[1.0]]))
    st = AdamState()
    ref = scalar_adam(1.0, 0.1, 10)
    prev = 1.0
    for t in range(10):
        backward(half_sq_norm_loss(p))
        adam_step([p], st, 0.1)
        assert abs(p.value[0, 0]) < abs(prev)
        prev = p.value[0, 0]
        assert abs(p.value[0, 0] - ref[t]) <= 1e-12


def test_clip_norm_scales_update():
    p = Param("w", np.array([[0.0, 0.0]]))
    p.grad[...] = [[30.0, 40.0]]
    st = AdamState()
    adam_step([p], st, 0.1, clip_norm=5.0)
    assert np.allclose(st.m["w"], 0.1 * np.array([[3.0, 4.0]]))


@pytest.mark.parametrize("kind", ["gp", "egp", "egp-h"])
@pytest.mark.parametrize("rope", [True, False])
def test_grad_check_small_models(kind, rope):
    corpus = synth_corpus(4, 10, 2, nested=True, max_entity_len=4)
    sample = [Sentence(s.id, s.tokens[:6], {x for x in s.spans if x.end < 6}) for s in corpus.sentences[:2]]
    cfg = small_cfg(**{"head.kind": kind, "rope.enabled": rope})
    model = SpanModel(cfg, Vocab.build(sample), corpus.types)
    rep = grad_check(model, sample)
    assert rep.max_rel_error <= 1e-4, str(rep)
    assert rep.checked == sum(p.size for p in model.params())


def test_grad_check_detects_corrupted_backward(monkeypatch):
    corpus = synth_corpus(4, 10, 2, nested=True, max_entity_len=4)
    sample = [Sentence(s.id, s.tokens[:6], {x for x in s.spans if x.end < 6}) for s in corpus.sentences[:2]]
    model = SpanModel(small_cfg(), Vocab.build(sample), corpus.types)
    original = model.head.backward

    def corrupted(cache, dscores):
        return original(cache, 1.5 * dscores)

    monkeypatch.setattr(model.head, "backward", corrupted)
    assert grad_check(model, sample).max_rel_error >= 1e-2


def synth_cfg(**over):
    base = {"train.preset": "synthetic", "encoder.v": 16, "head.d": 8, "seed": 2}
    base.update(over)
    return small_cfg(**base)


def test_one_epoch_deterministic():
    corpus = synth_corpus(1, 10, 3, False)
    cfg = synth_cfg(**{"train.epochs": 3})
    _, h1 = train(cfg, corpus)
    m2, h2 = train(cfg, corpus)
    assert [r.loss for r in h1] == [r.loss for r in h2]
    assert all(math.isfinite(r.loss) for r in h1)
    assert h1[-1].loss < h1[0].loss


def test_full_batch_loss_mostly_decreasing():
    corpus = synth_corpus(3, 20, 3, True)
    cfg = synth_cfg()
    vocab = Vocab.build(corpus)
    model = SpanModel(cfg, vocab, corpus.types)
    batch = make_batch(corpus.sentences, vocab)
    st = AdamState()
    losses = []
    for _ in range(50):
        g = model.loss_graph(batch)
        losses.append(g.value)
        backward(g)
        adam_step(model.params(), st, 1e-3)
    ups = sum(b > a for a, b in zip(losses, losses[1:]))
    assert ups <= 3, losses


def test_non_finite_loss_aborts(monkeypatch):
    corpus = synth_corpus(1, 4, 2, False)
    import gpner.model as model_mod

    monkeypatch.setattr(model_mod, "batch_span_loss", lambda *a, **k: (float("nan"), 0.0))
    with pytest.raises(TrainingError, match="epoch 0, batch 0"):
        train(synth_cfg(), corpus)


def test_best_dev_selection():
    corpus = synth_corpus(1, 30, 2, False)
    dev = synth_corpus(2, 10, 2, False)
    cfg = synth_cfg(**{"train.epochs": 4})
    model, hist = train(cfg, corpus, dev=dev)
    from gpner.train import corpus_f1

    assert corpus_f1(model, dev.sentences) == max(r.dev_f1 for r in hist)


def test_checkpoint_roundtrip(tmp_path):
    corpus = synth_corpus(1, 12, 3, True)
    model, _ = train(synth_cfg(**{"train.epochs": 2, "head.kind": "egp"}), corpus)
    path = tmp_path / "m.ckpt"
    checkpoint.save(model, path)
    back = checkpoint.load(path)
    held = synth_corpus(9, 6, 3, True).sentences
    b1 = model.batch(held)
    s1, _ = model.forward(b1)
    s2, _ = back.forward(back.batch(held))
    assert np.array_equal(s1, s2)
    assert [p.spans for p in model.predict_corpus(held)] == [p.spans for p in back.predict_corpus(held)]
    assert checkpoint.to_bytes(back) == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\0" * 8)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(path)
    corpus = synth_corpus(1, 3, 2, False)
    model = SpanModel(synth_cfg(), Vocab.build(corpus), corpus.types)
    data = checkpoint.to_bytes(model)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(data[:-3])


def test_zero_model_prediction_is_empty():
    corpus = synth_corpus(1, 3, 2, False)
    cfg = synth_cfg(**{"head.init": "zeros", "encoder.init": "zeros"})
    model = SpanModel(cfg, Vocab.build(corpus), corpus.types)
    s = corpus.sentences[0]
    # every parameter is zero, so each score is exactly 0 and nothing clears the > 0 rule
    assert not model.score_sentence(s).scores.any()
    assert len(model.predict(s.tokens)) == 0
    assert model.predict(list(s.tokens)).spans == model.predict(list(s.tokens)).spans


def test_empty_sentence_prediction():
    corpus = synth_corpus(1, 3, 2, False)
    model = SpanModel(synth_cfg(), Vocab.build(corpus), corpus.types)
    assert len(model.predict([])) == 0


def test_batched_scores_match_single(rng):
    corpus = synth_corpus(1, 5, 3, True)
    model = SpanModel(synth_cfg(), Vocab.build(corpus), corpus.types)
    scores, _ = model.forward(model.batch(corpus.sentences))
    for b, s in enumerate(corpus.sentences):
        single = model.score_sentence(s)
        n = len(s)
        np.testing.assert_allclose(scores[b, :, :n, :n], single.scores, atol=1e-12)


def test_precomputed_encoder_training(tmp_path, rng):
    from gpner.encoder import PrecomputedEmbeddings

    corpus = synth_corpus(1, 8, 2, False)
    emb = PrecomputedEmbeddings(6, {s.id: rng.normal(size=(len(s), 6)) for s in corpus})
    cfg = synth_cfg(**{"encoder.kind": "precomputed", "encoder.v": 6, "train.epochs": 2})
    model, hist = train(cfg, corpus, embeddings=emb)
    assert model.encoder is None and len(hist) == 2
    rep = grad_check(model, corpus.sentences[:1])
    assert rep.max_rel_error <= 1e-4
