"""Command line entry point: ``gpner <command> [options]``.

Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod

log = logging.getLogger("gpner")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value
    if args.seed is not None:
        out["seed"] = args.seed
    return out


def _resolve(args, extra: dict | None = None) -> dict:
    if args.config and not Path(args.config).exists():
        raise UsageError(f"config file not found: {args.config}")
    ov = dict(extra or {})
    ov.update(_overrides(args))
    return config_mod.load(args.config, ov)


def _out_dir(args) -> Path:
    p = Path(args.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_meta(path: Path, cfg: dict, **extra) -> None:
    meta = {"config": cfg, "seed": cfg["seed"], **extra}
    path.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"no {what} given")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _embeddings(cfg, sentences=None):
    if cfg["encoder.kind"] != "precomputed":
        return None
    from .encoder import load_precomputed

    path = _require(cfg["encoder.embeddings"], "precomputed embeddings file (encoder.embeddings)")
    return load_precomputed(path, dim=cfg["encoder.v"], sentences=sentences)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    from . import checkpoint
    from .data import read_corpus
    from .train import train

    extra = {}
    if args.train:
        extra["data.train"] = args.train
    if args.dev:
        extra["data.dev"] = args.dev
    cfg = _resolve(args, extra)
    train_path = _require(cfg["data.train"], "training corpus")
    corpus = read_corpus(train_path, split="train")
    dev = read_corpus(_require(cfg["data.dev"], "dev corpus"), split="dev") if cfg["data.dev"] else None
    sentences = corpus.sentences + (dev.sentences if dev else [])
    emb = _embeddings(cfg, sentences)
    out = _out_dir(args)
    model, history = train(cfg, corpus, dev=dev, embeddings=emb)
    checkpoint.save(model, out / "model.ckpt")
    with open(out / "metrics.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config={config_mod.dumps(cfg)}\n# seed={cfg['seed']}\n")
        fh.write("epoch\tloss\ttrain_f1\tdev_f1\n")
        for r in history:
            fh.write(f"{r.epoch}\t{r.loss!r}\t{_fmt(r.train_f1)}\t{_fmt(r.dev_f1)}\n")
    (out / "config.ini").write_text(config_mod.to_ini(cfg), encoding="utf-8")
    last = history[-1]
    print(f"trained {len(history)} epochs; final loss {last.loss:.6f}; checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


def _fmt(x):
    return "" if x is None else repr(x)


def _load_model(args, sentences=None):
    from . import checkpoint
    from .encoder import load_precomputed

    ckpt = _require(args.checkpoint, "checkpoint")
    emb = None
    data = ckpt.read_bytes()
    # peek at the stored config to learn whether external vectors are needed
    model_cfg = checkpoint.peek_config(data)
    if args.config or args.set:
        want = _resolve(args)
        for key in ("encoder.v", "head.d", "head.kind"):
            if want[key] != model_cfg[key]:
                raise UsageError(f"checkpoint has {key}={model_cfg[key]!r} but the config asks for {want[key]!r}")
    if model_cfg["encoder.kind"] == "precomputed":
        path = _require(args.embeddings or model_cfg["encoder.embeddings"], "precomputed embeddings file")
        emb = load_precomputed(path, dim=model_cfg["encoder.v"], sentences=sentences)
    return checkpoint.from_bytes(data, embeddings=emb)


def cmd_eval(args) -> int:
    from .data import read_corpus, read_jsonl
    from .evaluation import AXES, evaluate, write_kv

    gold_corpus = read_corpus(_require(args.corpus, "evaluation corpus"), split="test")
    if args.predictions:
        pred_corpus = read_jsonl(_require(args.predictions, "predictions file"))
        pred = {s.id: s.spans for s in pred_corpus}
        cfg = _resolve(args)
    else:
        model = _load_model(args, gold_corpus.sentences)
        cfg = model.cfg
        preds = model.predict_corpus(gold_corpus.sentences, mode=args.mode)
        pred = {s.id: p.span_set() for s, p in zip(gold_corpus, preds)}
    gold = {s.id: s.spans for s in gold_corpus}
    if len(gold) != len(gold_corpus):
        raise UsageError("evaluation corpus has duplicate sentence ids")
    axes = [a for a in (args.buckets or cfg["eval.buckets"]).split(",") if a]
    for a in axes:
        if a not in AXES:
            raise UsageError(f"unknown bucket axis {a!r}; expected one of {AXES}")
    lengths = {s.id: len(s) for s in gold_corpus}
    report = evaluate(gold, {sid: pred.get(sid, frozenset()) for sid in gold}, lengths, axes)
    out = _out_dir(args)
    text = report.table()
    (out / "report.txt").write_text(f"# config={config_mod.dumps(cfg)}\n# seed={cfg['seed']}\n{text}\n", encoding="utf-8")
    write_kv(report, out / "report.kv", {"config": config_mod.dumps(cfg), "seed": cfg["seed"]})
    print(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .data import read_corpus, sentence_to_obj

    inp = _require(args.input, "input corpus")
    corpus = read_corpus(inp, split="test")
    model = _load_model(args, corpus.sentences)
    mode = args.mode or model.cfg["decode.mode"]
    preds = model.predict_corpus(corpus.sentences, mode=mode)
    out_path = Path(args.output) if args.output else _out_dir(args) / "predictions.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for sent, pred in zip(corpus, preds):
            obj = sentence_to_obj(sent)
            obj["entities"] = [
                {"start": s.start, "end": s.end, "type": s.type, "score": s.score} for s in pred.spans
            ]
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    _write_meta(out_path.with_name(out_path.name + ".meta.json"), model.cfg, mode=mode)
    print(f"wrote {len(preds)} predictions to {out_path}")
    return EXIT_OK


def cmd_convert(args) -> int:
    from .data import read_corpus, write_conll_bio, write_jsonl

    src = _require(args.input, "input file")
    corpus = read_corpus(src)
    dst = Path(args.output)
    target = args.to or ("jsonl" if dst.suffix in (".jsonl", ".json") else "conll")
    if target == "jsonl":
        write_jsonl(corpus, dst)
    else:
        write_conll_bio(corpus, dst)
    print(f"converted {len(corpus)} sentences to {dst} ({target})")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import synth_corpus, write_jsonl

    cfg = _resolve(args)
    corpus = synth_corpus(cfg["seed"], args.sentences, args.types, args.nested)
    dst = Path(args.output) if args.output else _out_dir(args) / "synth.jsonl"
    dst.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(corpus, dst)
    _write_meta(dst.with_name(dst.name + ".meta.json"), cfg, sentences=args.sentences, types=args.types, nested=args.nested)
    print(f"wrote {len(corpus)} sentences to {dst}")
    return EXIT_OK


def gradcheck_sample(seed: int, types: int = 2, max_tokens: int = 6, count: int = 2):
    """Short sentences cut from a synthetic nested corpus, keeping in-range spans."""
    from .data import Corpus, Sentence, synth_corpus

    corpus = synth_corpus(seed, 20, types, nested=True, max_entity_len=4)
    out = []
    for s in corpus:
        spans = {sp for sp in s.spans if sp.end < max_tokens}
        if spans:
            out.append(Sentence(s.id, s.tokens[:max_tokens], spans))
        if len(out) == count:
            break
    return Corpus(out, types=corpus.types)


def cmd_gradcheck(args) -> int:
    from .data import Vocab
    from .model import SpanModel
    from .train import grad_check

    cfg = _resolve(args)
    sample = gradcheck_sample(cfg["seed"])
    emb = _embeddings(cfg, sample.sentences)
    model = SpanModel(cfg, Vocab.build(sample), sample.types, embeddings=emb)
    report = grad_check(model, sample.sentences, h=args.h)
    ok = report.max_rel_error <= args.tol
    print(f"{cfg['head.kind']} rope={'on' if cfg['rope.enabled'] else 'off'}: {report}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_bench(args) -> int:
    from .bench import run_bench

    cfg = _resolve(args)
    out = _out_dir(args)
    text = run_bench(cfg, v=args.v, repeats=args.repeats, lengths=args.lengths, type_counts=args.type_counts)
    (out / "bench.txt").write_text(f"# config={config_mod.dumps(cfg)}\n# seed={cfg['seed']}\n{text}\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--threads", type=int, help="BLAS threads")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gpner", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--train", help="training corpus (.jsonl or CoNLL BIO)")
    s.add_argument("--dev", help="dev corpus for best-epoch selection")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="strict-match evaluation")
    s.add_argument("--checkpoint")
    s.add_argument("--predictions", help="score a predictions JSONL instead of a checkpoint")
    s.add_argument("--corpus", required=True)
    s.add_argument("--embeddings")
    s.add_argument("--mode", choices=("nested", "flat"))
    s.add_argument("--buckets", help="comma-separated bucket axes")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", parents=[common], help="write span predictions")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output")
    s.add_argument("--embeddings")
    s.add_argument("--mode", choices=("nested", "flat"))
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("convert", parents=[common], help="convert between JSONL and CoNLL BIO")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--to", choices=("jsonl", "conll"))
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--sentences", type=int, default=200)
    s.add_argument("--types", type=int, default=3)
    s.add_argument("--nested", action="store_true")
    s.add_argument("--output")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--h", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bench", parents=[common], help="scoring throughput per head kind")
    s.add_argument("--v", type=int, default=256)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--lengths", type=int, nargs="+", default=[32, 64, 128, 256])
    s.add_argument("--type-counts", type=int, nargs="+", default=[1, 4, 10])
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    from .checkpoint import CheckpointError
    from .data import CorpusError
    from .numerics import DimensionError
    from .train import TrainingError

    try:
        return args.func(args)
    except (UsageError, config_mod.ConfigError, CorpusError, CheckpointError, DimensionError, FileNotFoundError, KeyError) as exc:
        print(f"gpner {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"gpner {args.command}: training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled failure", exc_info=True)
        print(f"gpner {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
