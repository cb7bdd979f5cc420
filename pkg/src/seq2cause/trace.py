"""Event-to-event discovery on a single sequence via randomized do-interventions.

For a candidate pair (s, d) every particle answers two queries for the
probability of the observed ``x_d``:

* *with*: history up to ``s`` kept, positions ``s+1 .. d-1`` redrawn from Q;
* *without*: history up to ``s-1`` kept, positions ``s .. d-1`` redrawn from Q.

Both share the particle's noise row, so the staircase of rows ``j`` (history
fixed through ``j``, everything later randomized) serves every pair at once:
row ``s`` gives *with* and row ``s-1`` gives *without* for all targets ``d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import InstanceTimeGraph, SummaryGraph, TimeEdge, as_sequence, project_summary
from .infokernel import EPS_C, ConfigError, SamplingConfig, binary_kl, clamp, sample_context_particles
from .rng import pmap_attributed, rng_for

THRESHOLD_CONSTANT = 1.72e-2
TAU_PRESET_1000 = 3e-5


def context_length(L: int) -> int:
    return max(math.ceil(0.1 * L), 20)


def recommended_threshold(vocab_size: int) -> float:
    """Inverse scaling law ``tau = C / |X|``."""
    if vocab_size < 2:
        raise ValueError("vocab_size must be at least 2")
    return THRESHOLD_CONSTANT / vocab_size


def _hb(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log(x) - (1 - x) * math.log(1 - x)


def noise_floor(eps: float) -> float:
    """CMI bias bound for an oracle within per-step KL ``eps``.

    With ``delta = sqrt(eps / 2)``: ``2 delta ln 2 + 2 (1 + delta) h_b(delta / (1 + delta))``.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    delta = math.sqrt(eps / 2.0)
    if delta > 0.5:
        raise ValueError(f"eps={eps} is outside the bound's regime (sqrt(eps/2) > 1/2)")
    return 2 * delta * math.log(2) + 2 * (1 + delta) * _hb(delta / (1 + delta))


@dataclass(frozen=True)
class TraceConfig:
    context: int | None = None  # None -> max(ceil(0.1 L), 20)
    n_particles: int = 128
    tau: float | None = None  # None -> recommended_threshold(|X|)
    variant: str = "sparse"
    memory: int = 6
    top_k: int = 35
    top_p: float = 0.8
    seed: int = 0
    score: str = "lagged_ig"  # or "granger"
    eps_c: float = EPS_C
    aggregate: str = "mixture"  # or "particle"
    stratified: bool = True

    def __post_init__(self):
        if self.variant not in ("full", "sparse"):
            raise ConfigError(f"variant must be 'full' or 'sparse', got {self.variant!r}")
        if self.variant == "sparse" and self.memory < 1:
            raise ConfigError("sparse memory must be at least 1")
        if self.tau is not None and not self.tau >= 0:
            raise ConfigError("tau must be nonnegative")
        if self.context is not None and self.context < 1:
            raise ConfigError("context must be at least 1; position 0 is the start marker")
        if self.n_particles < 1:
            raise ConfigError("n_particles must be at least 1")
        if self.score not in ("lagged_ig", "granger"):
            raise ConfigError(f"unknown score {self.score!r}")
        if self.aggregate not in ("mixture", "particle"):
            raise ConfigError(f"aggregate must be 'mixture' or 'particle', got {self.aggregate!r}")

    def context_for(self, L: int) -> int:
        c = context_length(L) if self.context is None else self.context
        if c >= L:
            raise ConfigError(f"context c={c} must be smaller than L={L}")
        return c

    def tau_for(self, vocab_size: int) -> float:
        return recommended_threshold(vocab_size) if self.tau is None else self.tau

    def sampling(self) -> SamplingConfig:
        return SamplingConfig(self.n_particles, self.top_k, self.top_p, None, self.seed)


def enumerate_pairs(L: int, c: int, variant: str = "full", m: int | None = None) -> list[tuple[int, int]]:
    """All (s, d) with ``c <= s < d <= L``; the sparse variant also needs ``d - s <= m``."""
    if c >= L:
        raise ConfigError(f"context c={c} must be smaller than L={L}")
    if variant == "sparse":
        if m is None or m < 1:
            raise ConfigError("sparse variant needs memory m >= 1")
        return [(s, d) for s in range(c, L) for d in range(s + 1, min(s + m, L) + 1)]
    if variant != "full":
        raise ConfigError(f"unknown variant {variant!r}")
    return [(s, d) for s in range(c, L) for d in range(s + 1, L + 1)]


def pair_count(L: int, c: int, variant: str = "full", m: int | None = None) -> int:
    """Closed form of ``len(enumerate_pairs(...))``."""
    n = L - c
    if variant == "full" or (m is not None and m >= n):
        return n * (n + 1) // 2
    # sources with a full window of m targets, then a triangular tail
    return (n - m) * m + m * (m + 1) // 2


def mediator_noise(seed: int, n_particles: int, length: int, n_events: int, stratified: bool = True) -> np.ndarray:
    """(N, length) draws from Q = Uniform over the vocabulary.

    Each particle's token at each position is marginally uniform. With
    ``stratified`` the N draws at one position are a shuffled tiling of the
    vocabulary, so every type is covered about N / n times instead of by luck.
    """
    if not stratified:
        return np.stack([rng_for((seed, l), "mediators").integers(0, n_events, length) for l in range(n_particles)])
    reps = -(-n_particles // n_events)
    out = np.empty((n_particles, length), dtype=np.int64)
    base = np.tile(np.arange(n_events, dtype=np.int64), reps)
    for t in range(length):
        out[:, t] = rng_for((seed, t), "mediators").permutation(base)[:n_particles]
    return out


@dataclass
class PairProbs:
    """Per-particle target probabilities for a set of pairs, shape (P, N)."""

    pairs: list[tuple[int, int]]
    p_with: np.ndarray
    p_without: np.ndarray
    n_tests: int
    buffer_bytes: int


def pair_probabilities(seq, pairs: Sequence[tuple[int, int]], event_est, cfg: TraceConfig) -> PairProbs:
    """Staircase evaluation of every pair's *with* / *without* probabilities."""
    tokens = np.asarray(as_sequence(seq).tokens, dtype=np.int64)
    L = len(tokens) - 1
    if event_est.cls_id != tokens[0]:
        raise ValueError("estimator start marker does not match the sequence")
    if tokens[1:].max(initial=0) >= event_est.n_events:
        raise ValueError("sequence uses event ids outside the estimator vocabulary")
    pairs = list(pairs)
    N = cfg.n_particles
    if not pairs:
        z = np.zeros((0, N))
        return PairProbs([], z, z.copy(), 0, 0)
    c = cfg.context_for(L)
    for s, d in pairs:
        if not c <= s < d <= L:
            raise ValueError(f"pair {(s, d)} is not admissible for c={c}, L={L}")
    particles = sample_context_particles(tokens, event_est, c, cfg.sampling())
    noise = mediator_noise(cfg.seed, N, L + 1, event_est.n_events, cfg.stratified)
    # which prefix ends each staircase row must answer
    need: dict[int, set[int]] = {}
    for s, d in pairs:
        need.setdefault(s, set()).add(d - 1)
        need.setdefault(s - 1, set()).add(d - 1)
    answers: dict[int, tuple[np.ndarray, dict[int, int]]] = {}
    peak = 0
    for j in sorted(need):
        ends = np.array(sorted(need[j]))
        last = int(ends.max()) + 1
        row = particles[:, :last].copy()
        row[:, j + 1:] = noise[:, j + 1:last]
        probs = event_est.dists_at(row, ends)  # (N, E, n)
        peak = max(peak, row.nbytes + probs.nbytes)
        targets = tokens[ends + 1]
        answers[j] = (probs[:, np.arange(len(ends)), targets], {int(e): i for i, e in enumerate(ends)})
    p_with = np.empty((len(pairs), N))
    p_without = np.empty((len(pairs), N))
    for i, (s, d) in enumerate(pairs):
        w, idx = answers[s]
        p_with[i] = w[:, idx[d - 1]]
        wo, idx = answers[s - 1]
        p_without[i] = wo[:, idx[d - 1]]
    return PairProbs(pairs, p_with, p_without, len(pairs), peak)


def scores_from_probs(pp: PairProbs, score: str = "lagged_ig", eps_c: float = EPS_C,
                      aggregate: str = "mixture") -> np.ndarray:
    """Per-pair scores.

    ``lagged_ig`` is KL(without || with) on the target event. With
    ``aggregate="mixture"`` both sides are first averaged over particles, so
    the divergence is between the two interventional distributions; with
    ``"particle"`` the per-particle divergences are averaged instead.
    """
    if score == "lagged_ig":
        if aggregate == "mixture":
            return binary_kl(clamp(pp.p_without.mean(axis=1), eps_c), clamp(pp.p_with.mean(axis=1), eps_c))
        if aggregate == "particle":
            return binary_kl(clamp(pp.p_without, eps_c), clamp(pp.p_with, eps_c)).mean(axis=1)
        raise ValueError(f"unknown aggregate {aggregate!r}")
    if score == "granger":
        return np.abs(pp.p_with - pp.p_without).mean(axis=1)
    raise ValueError(f"unknown score {score!r}")


def lagged_ig(seq, pair: tuple[int, int], event_est, cfg: TraceConfig) -> float:
    """KL(P(E_d | without) || P(E_d | with)) under the configured particle aggregation."""
    pp = pair_probabilities(seq, [pair], event_est, cfg)
    return float(scores_from_probs(pp, "lagged_ig", cfg.eps_c, cfg.aggregate)[0])


def neural_granger_score(seq, pair: tuple[int, int], event_est, cfg: TraceConfig) -> float:
    """Particle mean of ``|p_with - p_without|`` from the same queries as ``lagged_ig``."""
    return float(scores_from_probs(pair_probabilities(seq, [pair], event_est, cfg), "granger", cfg.eps_c)[0])


@dataclass
class TraceResult:
    graph: InstanceTimeGraph
    scores: dict[tuple[int, int], float]
    n_tests: int
    buffer_bytes: int
    tau: float


def discover_instance_detailed(seq, event_est, cfg: TraceConfig) -> TraceResult:
    s = as_sequence(seq)
    L = s.length
    c = cfg.context_for(L)
    pairs = enumerate_pairs(L, c, cfg.variant, cfg.memory if cfg.variant == "sparse" else None)
    pp = pair_probabilities(s, pairs, event_est, cfg)
    sc = scores_from_probs(pp, cfg.score, cfg.eps_c, cfg.aggregate)
    tau = cfg.tau_for(event_est.n_events)
    edges = tuple(TimeEdge(a, b, float(v)) for (a, b), v in zip(pairs, sc) if v >= tau)
    scores = {p: float(v) for p, v in zip(pairs, sc)}
    return TraceResult(InstanceTimeGraph(s.tokens, edges), scores, pp.n_tests, pp.buffer_bytes, tau)


def discover_instance(seq, event_est, cfg: TraceConfig) -> InstanceTimeGraph:
    return discover_instance_detailed(seq, event_est, cfg).graph


def discover_summary(seq, event_est, cfg: TraceConfig, aggregate: str = "max") -> SummaryGraph:
    g = discover_instance(seq, event_est, cfg)
    return project_summary(g, as_sequence(seq), aggregate)


def _detailed_task(args):
    seq, est, cfg = args
    return discover_instance_detailed(seq, est, cfg)


def batch_discover(dataset, event_est, cfg: TraceConfig, workers: int = 1) -> list[TraceResult]:
    """One result per sequence; identical for any ``workers``."""
    items = [(as_sequence(x), event_est, cfg) for x in dataset]
    return pmap_attributed(_detailed_task, items, workers, "sequence")
