"""Synthetic lagged-softmax SCMs over event vocabularies.

The transition law is

    P(X_t | x_{<t}) = softmax(b + sum_{k=1..m} gamma^k * W[k-1][x_{t-k}])

with row ``cls_id`` of every lag matrix fixed to zero, so the start marker
exerts no influence and histories shorter than ``m`` simply lose lag terms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import (
    EventSequence,
    InstanceTimeGraph,
    LabeledSequence,
    Rule,
    TimeEdge,
    And,
    Atom,
    Not,
    Or,
    as_sequence,
    check_rule,
    parse_rule,
    variables,
)
from .infokernel import binary_kl, clamp, inverse_cdf
from .rng import rng_for


class DegenerateSpecError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScmSpec:
    vocab_size: int
    memory: int
    weights: np.ndarray  # (memory, vocab_size, vocab_size), row = cause, column = effect
    bias: np.ndarray
    gamma: float = 1.0
    seed: int | None = None
    density: float | None = None
    weight_scale: float | None = None
    weight_min: float = 0.0
    _lagw: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        n, m = self.vocab_size, self.memory
        if n < 2:
            raise DegenerateSpecError("vocab_size must be at least 2")
        if m < 1:
            raise DegenerateSpecError("memory must be at least 1")
        if w.shape != (m, n, n) or b.shape != (n,):
            raise ValueError(f"weights must be {(m, n, n)} and bias {(n,)}, got {w.shape} and {b.shape}")
        if not 0.0 < self.gamma <= 1.0:
            raise DegenerateSpecError("decay gamma must lie in (0, 1]")
        lagw = np.zeros((m, n + 1, n))
        lagw[:, :n, :] = w * (self.gamma ** np.arange(1, m + 1))[:, None, None]
        for arr in (w, b, lagw):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "_lagw", lagw)

    @property
    def cls_id(self) -> int:
        return self.vocab_size

    @property
    def n_events(self) -> int:
        return self.vocab_size

    def decay(self, k: int) -> float:
        return self.gamma ** k

    def __eq__(self, other):
        if not isinstance(other, ScmSpec):
            return NotImplemented
        return (self.vocab_size, self.memory, self.gamma, self.seed) == (
            other.vocab_size, other.memory, other.gamma, other.seed
        ) and np.array_equal(self.weights, other.weights) and np.array_equal(self.bias, other.bias)

    __hash__ = None

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        triplets = [
            [int(k), int(i), int(j), float(self.weights[k, i, j])]
            for k, i, j in zip(*np.nonzero(self.weights))
        ]
        return {
            "vocab_size": self.vocab_size,
            "memory": self.memory,
            "bias": [float(x) for x in self.bias],
            "weights": triplets,
            "decay": {"kind": "exponential", "gamma": self.gamma},
            "seed": self.seed,
            "density": self.density,
            "weight_scale": self.weight_scale,
            "weight_min": self.weight_min,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScmSpec":
        n, m = int(d["vocab_size"]), int(d["memory"])
        w = np.zeros((m, n, n))
        for k, i, j, v in d["weights"]:
            w[int(k), int(i), int(j)] = v
        decay = d.get("decay", {"kind": "exponential", "gamma": 1.0})
        if decay.get("kind", "exponential") != "exponential":
            raise ValueError(f"unsupported decay kind {decay['kind']!r}")
        return cls(n, m, w, np.asarray(d["bias"], dtype=float), float(decay["gamma"]),
                   d.get("seed"), d.get("density"), d.get("weight_scale"), float(d.get("weight_min") or 0.0))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "ScmSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def generate_scm(vocab_size: int, memory: int, density: float, weight_scale: float = 5.0,
                 gamma: float = 1.0, seed: int = 0, bias_scale: float = 0.0, weight_min: float = 0.0) -> ScmSpec:
    """Random sparse SCM.

    Each lag matrix gets ``round(density * n^2)`` nonzero entries at uniformly
    random positions, with values uniform on ``[-weight_scale, weight_scale]``.
    A positive ``weight_min`` keeps magnitudes in ``[weight_min, weight_scale]``
    (random sign), which removes near-zero mechanisms. The bias is Gaussian
    with standard deviation ``bias_scale``.
    """
    if not 0.0 <= weight_min <= weight_scale:
        raise DegenerateSpecError("need 0 <= weight_min <= weight_scale")
    if not 0.0 < density <= 1.0:
        raise DegenerateSpecError(f"density must lie in (0, 1], got {density}")
    if vocab_size < 2 or memory < 1:
        raise DegenerateSpecError("need vocab_size >= 2 and memory >= 1")
    n = vocab_size
    rng = rng_for(seed, "scm")
    nnz = int(round(density * n * n))
    w = np.zeros((memory, n, n))
    for k in range(memory):
        idx = rng.choice(n * n, size=nnz, replace=False)
        if weight_min > 0:
            vals = rng.uniform(weight_min, weight_scale, size=nnz) * rng.choice([-1.0, 1.0], size=nnz)
        else:
            vals = rng.uniform(-weight_scale, weight_scale, size=nnz)
            vals[vals == 0.0] = weight_scale  # keep the count exact
        w[k].flat[idx] = vals
    bias = rng.normal(0.0, bias_scale, size=n) if bias_scale > 0 else np.zeros(n)
    return ScmSpec(n, memory, w, bias, gamma, seed, density, weight_scale, weight_min)


# ---------------------------------------------------------------------------
# transition law


def _check_tokens(spec: ScmSpec, tokens: np.ndarray) -> None:
    if tokens.size and (tokens.min() < 0 or tokens.max() > spec.cls_id):
        raise ValueError(f"token ids must lie in [0, {spec.cls_id}]")


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def logits_at(spec: ScmSpec, batch: np.ndarray, ends: np.ndarray | Sequence[int] | None = None) -> np.ndarray:
    """Next-event logits after each prefix ``batch[:, :e+1]`` for ``e`` in ``ends``.

    ``batch`` has shape (B, T). Returns (B, len(ends), n). ``ends`` defaults to
    the last position only.
    """
    batch = np.asarray(batch, dtype=np.int64)
    if batch.ndim == 1:
        batch = batch[None, :]
    _check_tokens(spec, batch)
    B, T = batch.shape
    ends = np.array([T - 1] if ends is None else ends, dtype=np.int64)
    out = np.broadcast_to(spec.bias, (B, len(ends), spec.vocab_size)).copy()
    for k in range(1, spec.memory + 1):
        pos = ends - k + 1
        ok = pos >= 0
        if not ok.any():
            continue
        toks = batch[:, pos[ok]]  # (B, n_ok)
        out[:, ok, :] += spec._lagw[k - 1][toks]
    return out


def dists_at(spec: ScmSpec, batch, ends=None) -> np.ndarray:
    return _softmax(logits_at(spec, batch, ends))


def transition_dist(spec: ScmSpec, history: Sequence[int]) -> np.ndarray:
    """Distribution of the next event after ``history`` (start markers are inert)."""
    h = np.asarray(list(history), dtype=np.int64)
    if h.size == 0:
        return _softmax(spec.bias.copy())
    return dists_at(spec, h[None, :])[0, 0]


def transition_dist_batch(spec: ScmSpec, histories: np.ndarray) -> np.ndarray:
    return dists_at(spec, histories)[:, 0, :]


# ---------------------------------------------------------------------------
# sampling


def sample_batch(spec: ScmSpec, L: int, uniforms: np.ndarray) -> np.ndarray:
    """Ancestral sampling driven by a (B, L) array of uniforms; returns (B, L+1) tokens."""
    B = uniforms.shape[0]
    out = np.full((B, L + 1), spec.cls_id, dtype=np.int64)
    for t in range(1, L + 1):
        lo = max(0, t - spec.memory)
        p = dists_at(spec, out[:, lo:t])[:, 0, :]
        out[:, t] = inverse_cdf(p, uniforms[:, t - 1])
    return out


def sample_sequence(spec: ScmSpec, L: int, seed) -> EventSequence:
    if L < 1:
        raise ValueError("L must be at least 1")
    u = rng_for(seed, "sample").random(L)
    return EventSequence(tuple(sample_batch(spec, L, u[None, :])[0]))


def sample_dataset(spec: ScmSpec, L: int, count: int, seed: int) -> list[EventSequence]:
    """``count`` sequences; sequence ``i`` equals ``sample_sequence(spec, L, (seed, i))``."""
    if count == 0:
        return []
    u = np.stack([rng_for((seed, i), "sample").random(L) for i in range(count)])
    return [EventSequence(tuple(row)) for row in sample_batch(spec, L, u)]


# ---------------------------------------------------------------------------
# entropy / predictability


@dataclass(frozen=True)
class EntropyStats:
    h_est: float
    h_max: float
    redundancy: float  # 1 - H/H_max


def entropy_stats(spec: ScmSpec, n_contexts: int = 64, horizon: int = 64, seed: int = 0) -> EntropyStats:
    """Monte-Carlo mean per-step conditional entropy (nats) along sampled trajectories."""
    if n_contexts < 1:
        raise ValueError("n_contexts must be at least 1")
    u = rng_for(seed, "entropy").random((n_contexts, horizon))
    seqs = sample_batch(spec, horizon, u)
    p = dists_at(spec, seqs, np.arange(horizon))
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0).sum(-1)
    h_est = float(h.mean())
    h_max = float(np.log(spec.vocab_size))
    return EntropyStats(h_est, h_max, 1.0 - h_est / h_max)


def tune_bias_scale(vocab_size: int, memory: int, density: float, weight_scale: float, gamma: float,
                    seed: int, target_redundancy: float, lo: float = 0.0, hi: float = 8.0,
                    iters: int = 20, **stats_kw) -> tuple[ScmSpec, EntropyStats]:
    """Bisection on the bias spread until the redundancy reaches ``target_redundancy``."""

    def build(s):
        spec = generate_scm(vocab_size, memory, density, weight_scale, gamma, seed, bias_scale=s)
        return spec, entropy_stats(spec, seed=seed, **stats_kw)

    spec, st = build(hi)
    if st.redundancy < target_redundancy:
        return spec, st
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        spec, st = build(mid)
        if st.redundancy < target_redundancy:
            lo = mid
        else:
            hi = mid
    return build(hi)


# ---------------------------------------------------------------------------
# interventional ground truth


def _binary_kl(p, q):
    return binary_kl(clamp(p, 1e-12), clamp(q, 1e-12))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    adjacency: np.ndarray  # (n, n) int8, row = cause type
    kl: np.ndarray  # (n, n) strongest mean interventional KL over lags

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset((int(u), int(v)) for u, v in zip(*np.nonzero(self.adjacency)))


def ground_truth_graph(spec: ScmSpec, n_counterfactuals: int = 10, kl_threshold: float = 0.05,
                       n_contexts: int = 32, seed: int = 0) -> GroundTruth:
    """Type-level interventional graph.

    For each cause type u and lag k, sampled observational histories get
    ``x_t = u``; the next ``k - 1`` events are drawn from the SCM and held
    fixed. The effect on event v is the binary KL between P(X_{t+k} = v) under
    the factual history and under ``x_t`` replaced by a uniform counterfactual.
    An edge u -> v exists when that KL, averaged over contexts and
    counterfactuals, exceeds ``kl_threshold`` at some lag.
    """
    if n_counterfactuals < 1:
        raise ValueError("n_counterfactuals must be at least 1")
    n, m = spec.vocab_size, spec.memory
    rng = rng_for(seed, "ground-truth")
    hist_len = m  # enough history to fill every lag slot before x_t
    base = sample_batch(spec, hist_len, rng.random((n_contexts, hist_len)))  # (C, m+1)
    med_u = rng.random((n_contexts, m))
    cf = rng.integers(0, n, size=(n_contexts, n_counterfactuals))
    kl = np.zeros((n, n))
    for u in range(n):
        seqs = np.concatenate([base, np.full((n_contexts, 1), u), np.zeros((n_contexts, m - 1), dtype=np.int64)], axis=1)
        t = hist_len + 1
        for j in range(1, m):
            p = dists_at(spec, seqs[:, : t + j])[:, 0, :]
            seqs[:, t + j] = inverse_cdf(p, med_u[:, j - 1])
        ends = np.arange(t, t + m)  # prefix end t+k-1 predicts X_{t+k}
        fact = dists_at(spec, seqs, ends)  # (C, m, n)
        cseqs = np.repeat(seqs, n_counterfactuals, axis=0)
        cseqs[:, t] = cf.reshape(-1)
        counter = dists_at(spec, cseqs, ends).reshape(n_contexts, n_counterfactuals, m, n)
        d = _binary_kl(fact[:, None], counter).mean(axis=(0, 1))  # (m, n)
        kl[u] = d.max(axis=0)
    adj = (kl > kl_threshold).astype(np.int8)
    return GroundTruth(adj, kl)


def instance_ground_truth(spec: ScmSpec, seq: EventSequence, pairs: Iterable[tuple[int, int]],
                          n_counterfactuals: int = 10, kl_threshold: float = 0.05, seed=0) -> InstanceTimeGraph:
    """Realized edges of one sequence.

    For each (s, d), ``x_s`` is replaced by ``n_counterfactuals`` uniform
    draws with the rest of the observed history kept, and the binary KL of
    P(X_d = x_d) against the factual value is averaged. Edges need a mean KL
    above ``kl_threshold``.
    """
    tokens = np.asarray(seq.tokens, dtype=np.int64)
    pairs = list(pairs)
    if not pairs:
        return InstanceTimeGraph(tuple(tokens))
    n = spec.vocab_size
    srcs = sorted({s for s, _ in pairs})
    ends = np.arange(len(tokens) - 1)
    fact = dists_at(spec, tokens[None, :], ends)[0]  # fact[e] predicts position e+1
    p_fact = fact[ends, tokens[1:]]
    edges = []
    by_src: dict[int, list[int]] = {}
    for s, d in pairs:
        by_src.setdefault(s, []).append(d)
    for s in srcs:
        cf = rng_for((seed, s), "instance-truth").integers(0, n, size=n_counterfactuals)
        batch = np.repeat(tokens[None, :], n_counterfactuals, axis=0)
        batch[:, s] = cf
        dsts = np.array(sorted(by_src[s]))
        q = dists_at(spec, batch, dsts - 1)  # (C, D, n)
        q_obs = q[:, np.arange(len(dsts)), tokens[dsts]]
        kl = _binary_kl(p_fact[dsts - 1][None, :], q_obs).mean(axis=0)
        for d, v in zip(dsts, kl):
            if v > kl_threshold:
                edges.append(TimeEdge(int(s), int(d), float(v)))
    return InstanceTimeGraph(tuple(int(t) for t in tokens), tuple(edges))


# ---------------------------------------------------------------------------
# label planting


@dataclass(frozen=True)
class LabelPlan:
    rules: tuple[tuple[int, Rule], ...]

    def __post_init__(self):
        ids = [j for j, _ in self.rules]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate label id")

    @property
    def n_labels(self) -> int:
        return max((j for j, _ in self.rules), default=-1) + 1

    def boundaries(self) -> dict[int, frozenset[int]]:
        return {j: frozenset(variables(r)) for j, r in self.rules}

    def check(self, n_events: int) -> None:
        for _, r in self.rules:
            check_rule(r, n_events)

    def to_dict(self) -> dict:
        return {"rules": [{"label": j, "rule": r.to_text()} for j, r in self.rules]}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelPlan":
        return cls(tuple((int(e["label"]), parse_rule(e["rule"])) for e in d["rules"]))


def random_label_plan(n_events: int, n_labels: int, min_vars: int = 1, max_vars: int = 4, seed: int = 0,
                      allow_not: bool = False, candidates: Sequence[int] | None = None) -> LabelPlan:
    """Rules of ``min_vars..max_vars`` distinct events joined by random AND/OR."""
    rng = rng_for(seed, "label-plan")
    pool = np.arange(n_events) if candidates is None else np.asarray(candidates)
    rules = []
    for j in range(n_labels):
        k = int(rng.integers(min_vars, max_vars + 1))
        evs = [int(e) for e in rng.choice(pool, size=k, replace=False)]
        atoms: list[Rule] = []
        for e in evs:
            a: Rule = Atom(e)
            if allow_not and len(evs) > 1 and rng.random() < 0.2:
                a = Not(a)
            atoms.append(a)
        rule = atoms[0]
        for a in atoms[1:]:
            if rng.random() < 0.5:
                rule = And((rule, a)) if not isinstance(rule, And) else And(rule.children + (a,))
            else:
                rule = Or((rule, a)) if not isinstance(rule, Or) else Or(rule.children + (a,))
        rules.append((j, rule))
    return LabelPlan(tuple(rules))


def plant_labels(plan: LabelPlan, dataset: Iterable[EventSequence | LabeledSequence]) -> list[LabeledSequence]:
    n = plan.n_labels
    out = []
    for item in dataset:
        seq = as_sequence(item)
        bits = [0] * n
        present = seq.present()
        for j, r in plan.rules:
            bits[j] = int(r.evaluate(present))
        out.append(LabeledSequence(seq, tuple(bits)))
    return out
