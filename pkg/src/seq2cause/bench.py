"""End-to-end benchmark loops: generate, estimate, discover, evaluate.

Each loop is a pure function of its config, so rows only differ across runs
in the wall-time column.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import InstanceTimeGraph, TimeEdge, project_summary
from .density import ExactOracle, RolloutLabelPosterior, perturbed_oracle
from .evalharness import (adjacency_from_edges, edges_from_adjacency, frequency_baseline, mb_metrics,
                          mean_sample_report, observable_boundaries, random_baseline, set_prf, shd)
from .fusion import FusionConfig, fuse
from .oscar import OscarConfig, batch_discover as oscar_batch
from .rng import pmap
from .scmgen import entropy_stats, generate_scm, instance_ground_truth, plant_labels, random_label_plan, sample_dataset
from .trace import TraceConfig, enumerate_pairs, pair_probabilities, scores_from_probs


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_hash(obj) -> str:
    """First 12 hex digits of the SHA-256 of the canonical JSON form."""
    text = json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# event-to-event benchmark


@dataclass(frozen=True)
class TraceBench:
    vocab_size: int = 100
    memory: int = 6
    density: float = 0.004
    weight_scale: float = 2.1
    weight_min: float = 1.8
    gamma: float = 1.0
    bias_scale: float = 0.0
    length: int = 64
    n_sequences: int = 4
    seeds: tuple[int, ...] = tuple(range(10))
    estimator: str = "exact"  # or "perturbed"
    eps: float = 0.0
    trace: TraceConfig = TraceConfig()
    n_counterfactuals: int = 10
    kl_threshold: float = 0.05
    random_rho: float = 0.01
    frequency_top_k: int = 5

    def __post_init__(self):
        if self.estimator not in ("exact", "perturbed"):
            raise ValueError(f"estimator must be 'exact' or 'perturbed', got {self.estimator!r}")
        if self.trace.memory != self.memory and self.trace.variant == "sparse":
            # the sparse window should match the generator's memory
            object.__setattr__(self, "trace", replace(self.trace, memory=self.memory))


TRACE_COLUMNS = ("config_hash", "seed", "f1", "precision", "recall", "shd", "granger_f1", "random_f1",
                 "frequency_f1", "n_truth", "n_pred", "n_tests", "buffer_bytes", "realized_eps", "redundancy",
                 "wall_s")


def _summary_edges(tokens, pairs, scores, tau) -> frozenset[tuple[int, int]]:
    g = InstanceTimeGraph(tokens, tuple(TimeEdge(a, b, float(v)) for (a, b), v in zip(pairs, scores) if v >= tau))
    return project_summary(g).edge_set()


def trace_seed_row(bench: TraceBench, seed: int) -> dict:
    t0 = time.perf_counter()
    n = bench.vocab_size
    spec = generate_scm(n, bench.memory, bench.density, bench.weight_scale, bench.gamma, seed,
                        bench.bias_scale, bench.weight_min)
    if bench.estimator == "exact" or bench.eps == 0:
        est, eps = ExactOracle(spec), 0.0
    else:
        est = perturbed_oracle(spec, bench.eps, seed=seed)
        eps = float(est.realized_eps)
    cfg = replace(bench.trace, seed=seed)
    tau = cfg.tau_for(n)
    stats = {k: [] for k in ("f1", "precision", "recall", "shd", "granger_f1", "random_f1", "frequency_f1",
                             "n_truth", "n_pred")}
    n_tests, peak = 0, 0
    for qi, seq in enumerate(sample_dataset(spec, bench.length, bench.n_sequences, seed)):
        L = seq.length
        c = cfg.context_for(L)
        pairs = enumerate_pairs(L, c, cfg.variant, cfg.memory if cfg.variant == "sparse" else None)
        pp = pair_probabilities(seq, pairs, est, cfg)
        n_tests += pp.n_tests
        peak = max(peak, pp.buffer_bytes)
        pred = _summary_edges(seq.tokens, pairs, scores_from_probs(pp, "lagged_ig", cfg.eps_c, cfg.aggregate), tau)
        gran = _summary_edges(seq.tokens, pairs, scores_from_probs(pp, "granger"), tau)
        truth = project_summary(instance_ground_truth(spec, seq, pairs, bench.n_counterfactuals,
                                                      bench.kl_threshold, seed=(seed, qi))).edge_set()
        m = set_prf(pred, truth)
        stats["f1"].append(m.f1)
        stats["precision"].append(m.precision)
        stats["recall"].append(m.recall)
        stats["shd"].append(shd(adjacency_from_edges(pred, n), adjacency_from_edges(truth, n)))
        stats["granger_f1"].append(set_prf(gran, truth).f1)
        rnd = edges_from_adjacency(random_baseline(n, bench.random_rho, (seed, qi)))
        stats["random_f1"].append(set_prf(rnd, truth).f1)
        freq = edges_from_adjacency(frequency_baseline([seq], bench.frequency_top_k, n))
        stats["frequency_f1"].append(set_prf(freq, truth).f1)
        stats["n_truth"].append(len(truth))
        stats["n_pred"].append(len(pred))
    row = {"config_hash": config_hash(bench), "seed": seed}
    row.update({k: float(np.mean(v)) for k, v in stats.items()})
    row.update(n_tests=n_tests, buffer_bytes=peak, realized_eps=eps,
               redundancy=entropy_stats(spec, seed=seed).redundancy, wall_s=time.perf_counter() - t0)
    return row


def _trace_task(args):
    return trace_seed_row(*args)


def run_trace_bench(bench: TraceBench, workers: int = 1) -> list[dict]:
    return pmap(_trace_task, [(bench, s) for s in bench.seeds], workers)


# ---------------------------------------------------------------------------
# event-to-label benchmark


@dataclass(frozen=True)
class OscarBench:
    vocab_size: int = 50
    memory: int = 4
    density: float = 0.02
    weight_scale: float = 2.0
    weight_min: float = 0.0
    gamma: float = 1.0
    bias_scale: float = 0.0
    n_labels: int = 20
    min_vars: int = 1
    max_vars: int = 4
    length: int = 32
    n_sequences: int = 200
    rollouts: int = 128
    seed: int = 0
    oscar: OscarConfig = OscarConfig()
    fusion: FusionConfig = FusionConfig()


@dataclass
class OscarBenchResult:
    config_hash: str
    graphs: list
    sample_observable: dict  # per-sequence scores against the observable boundary
    sample_global: dict  # per-sequence scores against the full rule variables
    fused: dict[str, dict]  # strategy -> scores of the consensus graph
    wall_s: float


def _scores(p, r, f) -> dict:
    return {"precision": p, "recall": r, "f1": f}


def run_oscar_bench(bench: OscarBench, workers: int = 1) -> OscarBenchResult:
    t0 = time.perf_counter()
    spec = generate_scm(bench.vocab_size, bench.memory, bench.density, bench.weight_scale, bench.gamma, bench.seed,
                        bench.bias_scale, bench.weight_min)
    plan = random_label_plan(bench.vocab_size, bench.n_labels, bench.min_vars, bench.max_vars, bench.seed)
    data = plant_labels(plan, sample_dataset(spec, bench.length, bench.n_sequences, bench.seed))
    est = ExactOracle(spec)
    lab = RolloutLabelPosterior(est, plan, bench.length, bench.rollouts, bench.seed)
    cfg = replace(bench.oscar, seed=bench.seed)
    graphs = oscar_batch(data, est, lab, cfg, workers)
    bounds = plan.boundaries()
    obs = [observable_boundaries(s, bounds, cfg.context + 1) for s in data]
    glob = [{j: bounds[j] for j in s.positive_labels()} for s in data]
    so = mean_sample_report(graphs, obs)
    sg = mean_sample_report(graphs, glob)
    fused = {}
    for strategy in ("union", "static", "adaptive"):
        fg = fuse(graphs, replace(bench.fusion, strategy=strategy))
        rep = mb_metrics(fg, {j: bounds[j] for j in fg.labels()})
        fused[strategy] = _scores(rep.weighted.precision, rep.weighted.recall, rep.weighted.f1)
    return OscarBenchResult(config_hash(bench), graphs, _scores(so.precision, so.recall, so.f1),
                            _scores(sg.precision, sg.recall, sg.f1), fused, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# CSV


def summarize(rows: Sequence[dict], skip: Sequence[str] = ("config_hash", "seed")) -> tuple[dict, dict]:
    """Mean and population std of every numeric column."""
    keys = [k for k in rows[0] if k not in skip]
    mean = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    std = {k: float(np.std([r[k] for r in rows])) for k in keys}
    return mean, std


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] = TRACE_COLUMNS, summary: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)

    def fmt(v):
        return f"{v:.6g}" if isinstance(v, float) else v

    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in columns])
    if summary and rows:
        mean, std = summarize(rows)
        w.writerow([rows[0].get("config_hash", ""), "mean±std"]
                   + [f"{mean[c]:.6g}±{std[c]:.6g}" if c in mean else "" for c in columns[2:]])
    return buf.getvalue()
