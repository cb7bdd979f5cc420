"""Sample-level Markov boundary discovery between events and labels.

For one sequence the pipeline runs in four vectorized steps:

1. draw N context particles (positions ``1 .. c-1`` resampled, the rest observed);
2. query label posteriors after every prefix ending at ``c .. L`` on every particle;
3. score position ``i`` by the particle mean of KL(post[i+1] || post[i]),
   the information the event at ``i+1`` adds about each label;
4. flag positions at or above the per-label dynamic threshold.

Flagged (position, label) pairs become edges ``x_{i+1} -> Y_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabeledSequence, MarkovBoundaryGraph, MbEdge, as_sequence
from .infokernel import EPS_C, CmiSeries, ConfigError, SamplingConfig, ace, cmi_estimate, dynamic_threshold, sample_context_particles
from .rng import pmap_attributed


@dataclass(frozen=True)
class OscarConfig:
    context: int = 15
    n_particles: int = 68
    top_k: int = 35
    top_p: float = 0.8
    temperature: float | None = None
    k: float = 2.75
    eps_c: float = EPS_C
    seed: int = 0

    def __post_init__(self):
        if self.context < 1:
            raise ConfigError("context must be at least 1")
        # validates the sampling fields
        self.sampling()

    def sampling(self) -> SamplingConfig:
        return SamplingConfig(self.n_particles, self.top_k, self.top_p, self.temperature, self.seed)


@dataclass
class OscarResult:
    graph: MarkovBoundaryGraph
    series: CmiSeries
    tau: np.ndarray
    mask: np.ndarray


def _check(tokens: np.ndarray, event_est, label_est, c: int) -> None:
    if len(tokens) < c + 2:
        raise ValueError(f"sequence of {len(tokens)} tokens is too short for context c={c}")
    if event_est.cls_id != tokens[0]:
        raise ValueError("estimator start marker does not match the sequence")
    if tokens[1:].max(initial=0) >= event_est.n_events:
        raise ValueError("sequence uses event ids outside the estimator vocabulary")
    oracle = getattr(label_est, "oracle", None)
    if oracle is not None and oracle.n_events != event_est.n_events:
        raise ValueError("event and label estimators disagree on the vocabulary")


def cmi_series(seq, event_est, label_est, cfg: OscarConfig):
    """Steps 1-3: the (positions, labels) CMI series plus the particle posteriors."""
    tokens = np.asarray(as_sequence(seq).tokens, dtype=np.int64)
    c = cfg.context
    _check(tokens, event_est, label_est, c)
    L = len(tokens) - 1
    particles = sample_context_particles(tokens, event_est, c, cfg.sampling())
    ends = np.arange(c, L + 1)
    post = label_est.posterior_series(particles, ends)  # (N, L-c+1, J)
    p_with, p_without = post[:, 1:, :], post[:, :-1, :]
    values = cmi_estimate(p_with, p_without, axis=0, eps=cfg.eps_c)
    return CmiSeries(values, ends[:-1], cfg.n_particles, c), p_with, p_without


def discover_detailed(seq, event_est, label_est, cfg: OscarConfig) -> OscarResult:
    tokens = as_sequence(seq).tokens
    series, p_with, p_without = cmi_series(seq, event_est, label_est, cfg)
    tau, mask = dynamic_threshold(series, cfg.k)
    a_mean, a_std = ace(p_with, p_without, axis=0)
    J = series.values.shape[1]
    if isinstance(seq, LabeledSequence):
        labels = [j for j in seq.positive_labels() if j < J]
    else:
        labels = list(range(J))
    # a flat series makes every position tie with tau; nothing is identifiable
    flat = np.ptp(series.values, axis=0) == 0
    suppressed = [j for j in labels if flat[j]]
    best: dict[tuple[int, int], MbEdge] = {}
    for j in labels:
        if flat[j]:
            continue
        for r in np.nonzero(mask[:, j])[0]:
            i = int(series.positions[r])
            ev = int(tokens[i + 1])
            edge = MbEdge(j, ev, float(series.values[r, j]), float(np.clip(a_mean[r, j], -1, 1)), float(a_std[r, j]))
            # an event seen at several flagged positions keeps its strongest one
            old = best.get((j, ev))
            if old is None or edge.cmi > old.cmi:
                best[(j, ev)] = edge
    graph = MarkovBoundaryGraph(tuple(best.values()), tuple(labels), tuple(suppressed))
    return OscarResult(graph, series, tau, mask)


def discover(seq, event_est, label_est, cfg: OscarConfig) -> MarkovBoundaryGraph:
    return discover_detailed(seq, event_est, label_est, cfg).graph


def _task(args):
    seq, event_est, label_est, cfg = args
    return discover(seq, event_est, label_est, cfg)


def batch_discover(dataset, event_est, label_est, cfg: OscarConfig, workers: int = 1) -> list[MarkovBoundaryGraph]:
    """Element ``i`` equals ``discover(dataset[i], ...)`` for any worker count."""
    items = [(x, event_est, label_est, cfg) for x in dataset]
    if not items:
        raise ValueError("dataset is empty")
    return pmap_attributed(_task, items, workers, "sequence")
