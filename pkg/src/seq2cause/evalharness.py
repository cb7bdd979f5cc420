"""Evaluation: set metrics, SHD, naive baselines, CPMW and rule comparison."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import EventSequence, LabeledSequence, MarkovBoundaryGraph, Rule, ShapeError, as_sequence, variables
from .rng import rng_for

TRUTH_TABLE_CAP = 20


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    support: int = 0
    empty_pred: bool = False


def set_prf(pred: Iterable, truth: Iterable) -> PRF:
    """Set precision/recall/F1.

    Both empty scores 1/1/1. An empty prediction against a nonempty truth has
    precision 0 and is flagged.
    """
    pred, truth = set(pred), set(truth)
    tp = len(pred & truth)
    if not pred and not truth:
        return PRF(1.0, 1.0, 1.0, 0, True)
    p = tp / len(pred) if pred else 0.0
    r = tp / len(truth) if truth else 1.0
    f =2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f, len(truth), not pred)


def _counts(pred: set, truth: set) -> tuple[int, int, int]:
    tp = len(pred & truth)
    return tp, len(pred) - tp, len(truth) - tp


@dataclass
class MetricReport:
    per_label: dict[int, PRF]
    micro: PRF
    macro: PRF
    weighted: PRF
    shd: int | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "support", "precision", "recall", "f1"])
        for j in sorted(self.per_label):
            m = self.per_label[j]
            w.writerow([j, m.support, f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.f1:.6f}"])
        for name in ("micro", "macro", "weighted"):
            m = getattr(self, name)
            w.writerow([name, m.support, f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.f1:.6f}"])
        return buf.getvalue()


def aggregate_report(preds: Mapping[int, set], truths: Mapping[int, set], labels: Sequence[int] | None = None) -> MetricReport:
    labels = sorted(set(preds) | set(truths)) if labels is None else list(labels)
    per = {j: set_prf(preds.get(j, set()), truths.get(j, set())) for j in labels}
    tp = fp = fn = 0
    for j in labels:
        a, b, c = _counts(set(preds.get(j, set())), set(truths.get(j, set())))
        tp, fp, fn = tp + a, fp + b, fn + c
    support = sum(len(truths.get(j, ())) for j in labels)
    if tp + fp + fn == 0:
        micro = PRF(1.0, 1.0, 1.0, support)
    else:
        mp = tp / (tp + fp) if tp + fp else 0.0
        mr = tp / (tp + fn) if tp + fn else 1.0
        micro = PRF(mp, mr, 2 * mp * mr / (mp + mr) if mp + mr else 0.0, support)
    if per:
        macro = PRF(*(float(np.mean([getattr(m, a) for m in per.values()])) for a in ("precision", "recall", "f1")), support)
    else:
        macro = PRF(1.0, 1.0, 1.0, 0)
    wts = np.array([per[j].support for j in labels], dtype=float)
    if wts.sum() > 0:
        weighted = PRF(*(float(np.average([getattr(per[j], a) for j in labels], weights=wts))
                         for a in ("precision", "recall", "f1")), support)
    else:
        weighted = macro
    return MetricReport(per, micro, macro, weighted)


def mb_metrics(pred: MarkovBoundaryGraph, truth: Mapping[int, Iterable[int]],
               labels: Sequence[int] | None = None) -> MetricReport:
    """Per-label boundary recovery. ``labels`` defaults to the truth's label set."""
    truths = {j: set(v) for j, v in truth.items()}
    preds = {j: set(pred.boundary(j)) for j in (truths if labels is None else labels)}
    return aggregate_report(preds, truths, sorted(truths) if labels is None else labels)


def shd(a, b) -> int:
    """Structural Hamming distance: L1 distance between binary adjacency matrices."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"adjacency shapes differ: {a.shape} vs {b.shape}")
    return int(np.abs(a.astype(np.int64) - b.astype(np.int64)).sum())


def adjacency_from_edges(edges: Iterable[tuple[int, int]], n: int) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.int8)
    for u, v in edges:
        a[u, v] = 1
    return a


def edges_from_adjacency(a: np.ndarray) -> frozenset[tuple[int, int]]:
    return frozenset((int(u), int(v)) for u, v in zip(*np.nonzero(a)))


# ---------------------------------------------------------------------------
# naive baselines


def random_baseline(vocab_size: int, rho: float = 0.01, seed: int = 0) -> np.ndarray:
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    return (rng_for(seed, "random-baseline").random((vocab_size, vocab_size)) < rho).astype(np.int8)


def frequency_baseline(dataset: Iterable[EventSequence | LabeledSequence], top_k: int,
                       vocab_size: int | None = None) -> np.ndarray:
    """The ``top_k`` most frequent types point to every observed type.

    Ties in frequency go to the lower id.
    """
    seqs = [as_sequence(s) for s in dataset]
    events = np.concatenate([np.asarray(s.events, dtype=np.int64) for s in seqs]) if seqs else np.zeros(0, np.int64)
    n = int(vocab_size if vocab_size is not None else (events.max() + 1 if events.size else 0))
    a = np.zeros((n, n), dtype=np.int8)
    if top_k <= 0 or events.size == 0:
        return a
    counts = np.bincount(events, minlength=n)
    order = np.lexsort((np.arange(n), -counts))
    sources = [int(i) for i in order[:top_k] if counts[i] > 0]
    observed = np.nonzero(counts)[0]
    for s in sources:
        a[s, observed] = 1
    return a


# ---------------------------------------------------------------------------
# CPMW


@dataclass(frozen=True)
class CpmwResult:
    onset: float | None
    auc: float | None

    @property
    def has_onset(self) -> bool:
        return self.onset is not None


def cpmw(curve: Sequence[float], theta: float, direction: str = "quality", mean_len: float | None = None,
         xs: Sequence[float] | None = None) -> CpmwResult:
    """Onset index where the curve first clears ``theta`` and the trapezoidal mean after it.

    ``direction`` is ``"quality"`` (clears when >= theta) or ``"error"`` (when
    <= theta). The mean runs over [onset, mean_len]; the curve is held flat
    beyond its last point.
    """
    z = np.asarray(curve, dtype=np.float64)
    if z.size == 0:
        raise ValueError("curve is empty")
    x = np.arange(z.size, dtype=np.float64) if xs is None else np.asarray(xs, dtype=np.float64)
    end = float(x[-1] if mean_len is None else mean_len)
    if end < x[-1]:
        raise ValueError("mean_len must not precede the last observation")
    if direction == "quality":
        hit = z >= theta
    elif direction == "error":
        hit = z <= theta
    else:
        raise ValueError("direction must be 'quality' or 'error'")
    if not hit.any():
        return CpmwResult(None, None)
    i = int(np.argmax(hit))
    onset = float(x[i])
    xs_, zs_ = x[i:], z[i:]
    if end > xs_[-1]:
        xs_ = np.append(xs_, end)
        zs_ = np.append(zs_, zs_[-1])
    if end == onset:
        return CpmwResult(onset, float(z[i]))
    area = float(np.sum((zs_[1:] + zs_[:-1]) * np.diff(xs_)) / 2.0)
    return CpmwResult(onset, area / (end - onset))


# ---------------------------------------------------------------------------
# rule comparison


def truth_table_compare(pred: Rule, truth: Rule, cap: int = TRUTH_TABLE_CAP) -> dict[str, float]:
    """Score ``pred`` against ``truth`` over every assignment of their joint variables."""
    vars_ = sorted(set(variables(pred)) | set(variables(truth)))
    if len(vars_) > cap:
        raise ValueError(f"{len(vars_)} variables exceed the truth-table cap of {cap}")
    tp = fp = fn = tn = 0
    for bits in itertools.product((False, True), repeat=len(vars_)):
        present = {v for v, b in zip(vars_, bits) if b}
        y, yh = truth.evaluate(present), pred.evaluate(present)
        tp += y and yh
        fp += (not y) and yh
        fn += y and not yh
        tn += (not y) and not yh
    total = tp + fp + fn + tn
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return {
        "accuracy": (tp + tn) / total,
        "precision": p,
        "recall": r,
        "f1": 2 * p * r / (p + r) if p + r else 0.0,
    }


def structural_rule_eval(pred: Rule, truth: Rule) -> PRF:
    return set_prf(variables(pred), variables(truth))


# ---------------------------------------------------------------------------
# summaries


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())


def observable_boundaries(seq, boundaries: Mapping[int, Iterable[int]], start: int) -> dict[int, frozenset[int]]:
    """Boundary events of each positive label that occur at positions ``>= start``.

    This is the part of a rule-defined boundary a sample-level method can
    attribute when positions before ``start`` are resampled context.
    """
    tokens = as_sequence(seq).tokens
    late = set(tokens[start:])
    labels = seq.positive_labels() if isinstance(seq, LabeledSequence) else sorted(boundaries)
    return {j: frozenset(set(boundaries[j]) & late) for j in labels}


@dataclass
class SampleSummary:
    reports: list[MetricReport]
    precision: float
    recall: float
    f1: float


def mean_sample_report(preds: Sequence[MarkovBoundaryGraph], truths: Sequence[Mapping[int, Iterable[int]]]) -> SampleSummary:
    """Support-weighted P/R/F1 per sample, averaged over samples with at least one label."""
    if len(preds) != len(truths):
        raise ShapeError("need one truth mapping per predicted graph")
    reps = [mb_metrics(g, t) for g, t in zip(preds, truths) if len(t)]
    if not reps:
        return SampleSummary([], 1.0, 1.0, 1.0)
    return SampleSummary(
        reps,
        float(np.mean([r.weighted.precision for r in reps])),
        float(np.mean([r.weighted.recall for r in reps])),
        float(np.mean([r.weighted.f1 for r in reps])),
    )
