"""Strict span-match evaluation and length/density breakdowns.

A predicted span counts as correct only when start, end and type all match a
gold span of the same sentence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .data import Span

AXES = ("sentence_length", "entity_length", "density")


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    counts: Counts
    # set when a 0/0 ratio was reported as 0
    undefined: bool = False


def prf(c: Counts) -> PRF:
    undefined = False
    if c.tp + c.fp:
        p = c.tp / (c.tp + c.fp)
    else:
        p, undefined = 0.0, True
    if c.tp + c.fn:
        r = c.tp / (c.tp + c.fn)
    else:
        r, undefined = 0.0, True
    f = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(p, r, f, c, undefined)


@dataclass
class EvalReport:
    micro: PRF
    macro_f1: float
    per_type: dict[str, PRF]
    support: dict[str, int]
    buckets: dict[str, dict[str, "EvalReport"]] = field(default_factory=dict)

    def to_kv(self, prefix: str = "") -> dict[str, float | int]:
        out: dict[str, float | int] = {
            f"{prefix}micro.p": self.micro.precision,
            f"{prefix}micro.r": self.micro.recall,
            f"{prefix}micro.f1": self.micro.f1,
            f"{prefix}micro.tp": self.micro.counts.tp,
            f"{prefix}micro.fp": self.micro.counts.fp,
            f"{prefix}micro.fn": self.micro.counts.fn,
            f"{prefix}micro.undefined": int(self.micro.undefined),
            f"{prefix}macro.f1": self.macro_f1,
        }
        for t, r in sorted(self.per_type.items()):
            out[f"{prefix}per_type.{t}.p"] = r.precision
            out[f"{prefix}per_type.{t}.r"] = r.recall
            out[f"{prefix}per_type.{t}.f1"] = r.f1
            out[f"{prefix}per_type.{t}.support"] = self.support.get(t, 0)
        for axis, buckets in self.buckets.items():
            for name, rep in buckets.items():
                sub = rep.to_kv()
                for k in ("micro.p", "micro.r", "micro.f1", "micro.tp", "micro.fp", "micro.fn"):
                    out[f"{prefix}bucket.{axis}.{name}.{k.split('.', 1)[1]}"] = sub[k]
        return out

    def table(self) -> str:
        lines = [f"{'type':<12}{'P':>8}{'R':>8}{'F1':>8}{'support':>9}"]
        for t, r in sorted(self.per_type.items()):
            lines.append(f"{t:<12}{r.precision:8.4f}{r.recall:8.4f}{r.f1:8.4f}{self.support.get(t, 0):9d}")
        m = self.micro
        lines.append(f"{'micro':<12}{m.precision:8.4f}{m.recall:8.4f}{m.f1:8.4f}{m.counts.tp + m.counts.fn:9d}")
        lines.append(f"{'macro-F1':<12}{'':>16}{self.macro_f1:8.4f}")
        if m.undefined:
            lines.append("note: an undefined ratio (0/0) was reported as 0")
        for axis, buckets in self.buckets.items():
            lines.append("")
            lines.append(f"[{axis}]")
            for name, rep in buckets.items():
                b = rep.micro
                lines.append(
                    f"{name:<12}{b.precision:8.4f}{b.recall:8.4f}{b.f1:8.4f}"
                    f"  tp={b.counts.tp} fp={b.counts.fp} fn={b.counts.fn}"
                )
        return "\n".join(lines)


SpanSets = Mapping[str, frozenset[Span] | set[Span]] | Sequence[frozenset[Span] | set[Span]]


def _as_mapping(x) -> dict:
    if isinstance(x, Mapping):
        return dict(x)
    return {str(k): v for k, v in enumerate(x)}


def type_counts(gold, pred) -> dict[str, Counts]:
    gold, pred = _as_mapping(gold), _as_mapping(pred)
    if set(gold) != set(pred):
        missing = sorted(set(gold) ^ set(pred))
        raise ValueError(f"gold and prediction sentence ids differ: {missing[:5]}")
    per: dict[str, Counts] = {}
    for sid in gold:
        g, p = set(gold[sid]), set(pred[sid])
        for s in g & p:
            per.setdefault(s.type, Counts()).tp += 1
        for s in p - g:
            per.setdefault(s.type, Counts()).fp += 1
        for s in g - p:
            per.setdefault(s.type, Counts()).fn += 1
    return per


def strict_f1(gold: SpanSets, pred: SpanSets) -> EvalReport:
    per = type_counts(gold, pred)
    micro = Counts()
    for c in per.values():
        micro = micro + c
    per_type = {t: prf(c) for t, c in per.items()}
    # only types seen in gold or predictions contribute to the macro average
    macro = sum(r.f1 for r in per_type.values()) / len(per_type) if per_type else 0.0
    support = {t: c.tp + c.fn for t, c in per.items()}
    return EvalReport(prf(micro), macro, per_type, support)


def sentence_length_bucket(n: int) -> str:
    if n < 3:
        return "L1"
    if n < 6:
        return "L2"
    return "L3"


entity_length_bucket = sentence_length_bucket


def density(spans, n: int) -> float:
    covered = set()
    for s in spans:
        covered.update(range(s.start, s.end + 1))
    return len(covered) / n if n else 0.0


def density_bucket(x: float) -> str:
    if x <= 0.1:
        return "D1"
    if x <= 0.3:
        return "D2"
    return "D3"


def bucket_report(gold: SpanSets, pred: SpanSets, axis: str, lengths: Mapping[str, int] | Sequence[int] | None = None) -> dict[str, EvalReport]:
    """Strict scores per bucket along ``axis``.

    ``sentence_length`` and ``density`` group whole sentences (they need
    ``lengths``); ``entity_length`` routes each gold or predicted span to the
    bucket of its own length.
    """
    gold, pred = _as_mapping(gold), _as_mapping(pred)
    if axis not in AXES:
        raise ValueError(f"unknown bucket axis {axis!r}; expected one of {AXES}")
    if axis == "entity_length":
        names = ["L1", "L2", "L3"]
        g_b = {b: {sid: {s for s in gold[sid] if entity_length_bucket(s.length()) == b} for sid in gold} for b in names}
        p_b = {b: {sid: {s for s in pred.get(sid, ()) if entity_length_bucket(s.length()) == b} for sid in gold} for b in names}
        return {b: strict_f1(g_b[b], p_b[b]) for b in names}
    if lengths is None:
        raise ValueError(f"axis {axis} needs sentence lengths")
    lengths = _as_mapping(lengths)
    if axis == "sentence_length":
        names = ["L1", "L2", "L3"]
        key = {sid: sentence_length_bucket(lengths[sid]) for sid in gold}
    else:
        names = ["D1", "D2", "D3"]
        key = {sid: density_bucket(density(gold[sid], lengths[sid])) for sid in gold}
    return {
        b: strict_f1({s: gold[s] for s in gold if key[s] == b}, {s: pred[s] for s in gold if key[s] == b})
        for b in names
    }


def evaluate(gold: SpanSets, pred: SpanSets, lengths=None, axes: Sequence[str] = ()) -> EvalReport:
    report = strict_f1(gold, pred)
    for axis in axes:
        report.buckets[axis] = bucket_report(gold, pred, axis, lengths)
    return report


def write_kv(report: EvalReport, path, extra: Mapping[str, object] | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in (extra or {}).items():
            fh.write(f"{k}={v}\n")
        for k, v in report.to_kv().items():
            fh.write(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n")
