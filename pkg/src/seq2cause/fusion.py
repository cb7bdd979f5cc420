"""Consensus graphs from per-sequence Markov boundaries.

Each sequence-level graph is one noisy vote per (label, event) edge. The
fused graph keeps an edge when its empirical frequency among the graphs that
speak for the label clears a threshold: zero (union), a constant (static), or
a logistic function of the label's support (adaptive). Rare labels get a
stricter threshold because their frequencies are noisier.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import MarkovBoundaryGraph, MbEdge
from .infokernel import ConfigError
from .rng import rng_for

STRATEGIES = ("union", "static", "adaptive")


@dataclass(frozen=True)
class FusionConfig:
    strategy: str = "adaptive"
    tau: float = 0.5  # static strategy only
    tau_max: float = 0.5
    tau_min: float = 0.05
    k: float | None = None  # None -> from the spread of supports

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 <= self.tau_min < self.tau_max <= 1.0:
            raise ConfigError("need 0 <= tau_min < tau_max <= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("static tau must lie in [0, 1]")
        if self.k is not None and not self.k > 0:
            raise ConfigError("k must be positive")


@dataclass
class EdgeStats:
    """Counts per (label, event) edge and support ``m_j`` per label."""

    counts: dict[tuple[int, int], int]
    support: dict[int, int]
    cmi: dict[tuple[int, int], float] = field(default_factory=dict)
    ace_mean: dict[tuple[int, int], float] = field(default_factory=dict)
    ace_std: dict[tuple[int, int], float] = field(default_factory=dict)

    def frequency(self, label: int, event: int) -> float:
        return self.counts.get((label, event), 0) / self.support[label]

    def rows(self) -> list[tuple[int, int, int, int, float]]:
        """(label, event, count, m_j, frequency) sorted by label then event."""
        return [(j, e, c, self.support[j], c / self.support[j]) for (j, e), c in sorted(self.counts.items())]


def edge_frequency(graphs: Sequence[MarkovBoundaryGraph]) -> EdgeStats:
    """Frequencies over the graphs that speak for each label.

    A graph supports label ``j`` when it lists ``j`` among its present labels
    or has an edge into it.
    """
    if not graphs:
        raise ValueError("need at least one graph")
    counts: dict[tuple[int, int], int] = {}
    support: dict[int, int] = {}
    sums: dict[tuple[int, int], np.ndarray] = {}
    for g in graphs:
        for j in g.labels():
            support[j] = support.get(j, 0) + 1
        for e in g.edges:
            key = (e.label, e.event)
            counts[key] = counts.get(key, 0) + 1
            sums[key] = sums.get(key, np.zeros(3)) + (e.cmi, e.ace_mean, e.ace_std)
    mean = {k: v / counts[k] for k, v in sums.items()}
    return EdgeStats(
        counts,
        support,
        {k: float(v[0]) for k, v in mean.items()},
        {k: float(v[1]) for k, v in mean.items()},
        {k: float(v[2]) for k, v in mean.items()},
    )


def support_slope(supports: Iterable[float]) -> float:
    """``2 ln 3 / (ln q75 - ln q25)``, or 1 when the quartiles coincide."""
    s = np.asarray(list(supports), dtype=np.float64)
    q25, q75 = np.percentile(s, [25, 75])
    if q75 == q25:
        return 1.0
    return 2.0 * math.log(3.0) / (math.log(q75) - math.log(q25))


def adaptive_threshold_fn(supports: Iterable[float], tau_max: float = 0.5, tau_min: float = 0.05,
                          k: float | None = None) -> Callable[[float], float]:
    """Logistic decay from ``tau_max`` to ``tau_min`` in log-support, centred on the median."""
    s = np.asarray(list(supports), dtype=np.float64)
    if s.size == 0:
        raise ValueError("supports must be nonempty")
    if (s < 1).any():
        raise ValueError("supports must all be at least 1")
    m0 = float(np.median(s))
    slope = support_slope(s) if k is None else float(k)
    span = tau_max - tau_min

    def tau(m: float) -> float:
        z = slope * (math.log(m) - math.log(m0))
        # split by sign so exp never overflows
        if z >= 0:
            ez = math.exp(-z)
            return span * ez / (1.0 + ez) + tau_min
        return span / (1.0 + math.exp(z)) + tau_min

    tau.m0 = m0  # type: ignore[attr-defined]
    tau.k = slope  # type: ignore[attr-defined]
    return tau


def label_thresholds(stats: EdgeStats, cfg: FusionConfig) -> dict[int, float]:
    if cfg.strategy == "union":
        return {j: 0.0 for j in stats.support}
    if cfg.strategy == "static":
        return {j: cfg.tau for j in stats.support}
    fn = adaptive_threshold_fn(list(stats.support.values()), cfg.tau_max, cfg.tau_min, cfg.k)
    return {j: fn(m) for j, m in stats.support.items()}


def fuse_stats(stats: EdgeStats, cfg: FusionConfig) -> MarkovBoundaryGraph:
    taus = label_thresholds(stats, cfg)
    edges = []
    for (j, e), c in stats.counts.items():
        f = c / stats.support[j]
        if cfg.strategy == "union" or f >= taus[j]:
            edges.append(MbEdge(j, e, stats.cmi.get((j, e), 0.0), stats.ace_mean.get((j, e), 0.0),
                                stats.ace_std.get((j, e), 0.0), f))
    return MarkovBoundaryGraph(tuple(edges), tuple(stats.support))


def fuse(graphs: Sequence[MarkovBoundaryGraph], cfg: FusionConfig = FusionConfig()) -> MarkovBoundaryGraph:
    return fuse_stats(edge_frequency(graphs), cfg)


def fusion_report(stats: EdgeStats, cfg: FusionConfig) -> str:
    """CSV with columns label, event, count, m_j, frequency, tau_j, kept."""
    taus = label_thresholds(stats, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "event", "count", "m_j", "frequency", "tau_j", "kept"])
    for j, e, c, m, f in stats.rows():
        kept = cfg.strategy == "union" or f >= taus[j]
        w.writerow([j, e, c, m, f"{f:.6f}", f"{taus[j]:.6f}", int(kept)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# noisy-detector simulation


def simulate_detections(true_boundaries: Mapping[int, Iterable[int]], n_events: int, n_graphs: int = 200,
                        p_true: float = 0.7, p_spurious: float = 0.1, prevalence: Mapping[int, float] | None = None,
                        seed: int = 0) -> list[MarkovBoundaryGraph]:
    """Per-sequence graphs from an imperfect detector.

    Each graph contains label ``j`` with probability ``prevalence[j]``
    (default 1). For a contained label, every true boundary event is detected
    with probability ``p_true`` and every other event with ``p_spurious``.
    """
    rng = rng_for(seed, "fusion-sim")
    labels = sorted(true_boundaries)
    truth = {j: frozenset(true_boundaries[j]) for j in labels}
    graphs = []
    for _ in range(n_graphs):
        present, edges = [], []
        for j in labels:
            if rng.random() >= (1.0 if prevalence is None else prevalence.get(j, 1.0)):
                continue
            present.append(j)
            rate = np.where(np.isin(np.arange(n_events), list(truth[j])), p_true, p_spurious)
            for e in np.nonzero(rng.random(n_events) < rate)[0]:
                edges.append(MbEdge(j, int(e), 1.0))
        graphs.append(MarkovBoundaryGraph(tuple(edges), tuple(present)))
    return graphs
