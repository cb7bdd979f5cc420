"""Density-estimator contracts and the implementations used in experiments.

An event estimator maps a prefix (start marker first) to a distribution over
the ``n_events`` event types. A label estimator maps a prefix to one
probability per label. Both are pure functions of the prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Rule
from .infokernel import EPS_C, clamp, inverse_cdf
from .rng import rng_for
from .scmgen import LabelPlan, ScmSpec, dists_at, sample_batch


class CalibrationError(ValueError):
    pass


class EventDensityEstimator:
    """Base contract. Subclasses implement ``dists_at`` or ``next_event_dist_batch``.

    ``memory`` is the Markov order if known; callers may use it to skip work but
    never to change results.
    """

    n_events: int
    cls_id: int
    memory: int | None = None

    def next_event_dist_batch(self, prefixes: np.ndarray) -> np.ndarray:
        return self.dists_at(prefixes)[:, 0, :]

    def dists_at(self, batch: np.ndarray, ends=None) -> np.ndarray:
        """(B, E, n) next-event distributions after each prefix ``batch[:, :e+1]``."""
        batch = np.asarray(batch, dtype=np.int64)
        if batch.ndim == 1:
            batch = batch[None, :]
        ends = [batch.shape[1] - 1] if ends is None else list(ends)
        return np.stack([self.next_event_dist_batch(batch[:, : e + 1]) for e in ends], axis=1)

    def next_event_dist(self, prefix: Sequence[int]) -> np.ndarray:
        return self.next_event_dist_batch(np.asarray(prefix, dtype=np.int64)[None, :])[0]


class ExactOracle(EventDensityEstimator):
    def __init__(self, spec: ScmSpec):
        self.spec = spec
        self.n_events = spec.vocab_size
        self.cls_id = spec.cls_id
        self.memory = spec.memory

    def dists_at(self, batch, ends=None):
        return dists_at(self.spec, batch, ends)


def exact_oracle(spec: ScmSpec) -> ExactOracle:
    return ExactOracle(spec)


class PerturbedOracle(EventDensityEstimator):
    """Mixture ``(1 - alpha) * P + alpha * Uniform``."""

    def __init__(self, spec: ScmSpec, alpha: float, realized_eps: float | None = None):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.spec = spec
        self.alpha = float(alpha)
        self.realized_eps = realized_eps
        self.n_events = spec.vocab_size
        self.cls_id = spec.cls_id
        self.memory = spec.memory

    def dists_at(self, batch, ends=None):
        p = dists_at(self.spec, batch, ends)
        if self.alpha == 0.0:
            return p
        return (1.0 - self.alpha) * p + self.alpha / self.n_events


def _mixture_kl(P: np.ndarray, alpha: float) -> float:
    n = P.shape[-1]
    Q = (1.0 - alpha) * P + alpha / n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(P > 0, P * (np.log(P) - np.log(Q)), 0.0)
    return float(t.sum(-1).mean())


def reference_histories(spec: ScmSpec, n_histories: int = 256, horizon: int = 32, seed: int = 0) -> np.ndarray:
    """Per-step true distributions along sampled trajectories, shape (H * horizon, n)."""
    u = rng_for(seed, "calibration").random((n_histories, horizon))
    seqs = sample_batch(spec, horizon, u)
    return dists_at(spec, seqs, np.arange(horizon)).reshape(-1, spec.vocab_size)


def perturbed_oracle(spec: ScmSpec, target_eps: float, n_histories: int = 256, horizon: int = 32,
                     seed: int = 0, rtol: float = 0.05) -> PerturbedOracle:
    """Calibrate ``alpha`` so the mean per-step KL(P || P_theta) hits ``target_eps``."""
    if target_eps < 0:
        raise ValueError("target_eps must be nonnegative")
    if target_eps == 0:
        return PerturbedOracle(spec, 0.0, 0.0)
    P = reference_histories(spec, n_histories, horizon, seed)
    ceiling = _mixture_kl(P, 1.0)
    if target_eps > ceiling * (1 + rtol):
        raise CalibrationError(f"target eps {target_eps} exceeds KL(P || Uniform) = {ceiling:.4g}")
    if target_eps >= ceiling:
        return PerturbedOracle(spec, 1.0, ceiling)
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        eps = _mixture_kl(P, mid)
        if abs(eps - target_eps) <= 1e-3 * rtol * target_eps:
            break
        if eps < target_eps:
            lo = mid
        else:
            hi = mid
    return PerturbedOracle(spec, mid, eps)


def realized_eps(spec: ScmSpec, alpha: float, **kw) -> float:
    return _mixture_kl(reference_histories(spec, **kw), alpha)


# ---------------------------------------------------------------------------
# learned lag-softmax model


def _lag_index(corpus: Sequence[Sequence[int]], m: int, cls_id: int):
    """Lag token matrix (T, m) and targets (T,) for every predicted position."""
    rows, targets = [], []
    for toks in corpus:
        toks = np.asarray(toks, dtype=np.int64)
        L = len(toks) - 1
        padded = np.concatenate([np.full(m - 1, cls_id), toks])
        # row for target position t holds x_{t-1}, ..., x_{t-m}
        idx = np.arange(1, L + 1)[:, None] + (m - 1) - np.arange(1, m + 1)[None, :]
        rows.append(padded[idx])
        targets.append(toks[1:])
    return np.concatenate(rows), np.concatenate(targets)


@dataclass
class LaggedSoftmaxLearner(EventDensityEstimator):
    weights: np.ndarray  # (m, n, n)
    bias: np.ndarray
    loss_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        m, n, _ = self.weights.shape
        self.n_events = n
        self.cls_id = n
        self.memory = m
        self.spec = ScmSpec(n, m, self.weights, self.bias, 1.0)

    def dists_at(self, batch, ends=None):
        return dists_at(self.spec, batch, ends)


def nll_and_grad(weights: np.ndarray, bias: np.ndarray, lags: np.ndarray, targets: np.ndarray):
    """Mean negative log-likelihood of the lag-softmax family and its gradient."""
    m, n, _ = weights.shape
    padded = np.concatenate([weights, np.zeros((m, 1, n))], axis=1)
    logits = bias[None, :] + sum(padded[k][lags[:, k]] for k in range(m))
    logits -= logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1))
    T = len(targets)
    loss = float((logz - logits[np.arange(T), targets]).mean())
    g = np.exp(logits - logz[:, None])
    g[np.arange(T), targets] -= 1.0
    g /= T
    gb = g.sum(axis=0)
    gw = np.zeros((m, n + 1, n))
    for k in range(m):
        np.add.at(gw[k], lags[:, k], g)
    return loss, gw[:, :n, :], gb


def train_lagged_softmax(corpus, m: int, epochs: int = 200, lr: float = 0.05, seed: int = 0,
                         n_events: int | None = None, init_scale: float = 0.01,
                         l2: float = 0.0) -> LaggedSoftmaxLearner:
    """Full-batch Adam on the average next-event NLL."""
    seqs = [np.asarray(getattr(s, "tokens", s), dtype=np.int64) for s in corpus]
    if not seqs:
        raise ValueError("training corpus is empty")
    if m < 1:
        raise ValueError("memory must be at least 1")
    if n_events is None:
        n_events = int(max(int(s.max()) for s in seqs))  # the start marker is the largest id
    lags, targets = _lag_index(seqs, m, n_events)
    rng = rng_for(seed, "learner-init")
    W = rng.normal(0.0, init_scale, size=(m, n_events, n_events))
    b = np.zeros(n_events)
    mw, vw = np.zeros_like(W), np.zeros_like(W)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    b1, b2, tiny = 0.9, 0.999, 1e-8
    trace = []
    for ep in range(1, epochs + 1):
        loss, gw, gb = nll_and_grad(W, b, lags, targets)
        if l2:
            loss += 0.5 * l2 * float((W ** 2).sum())
            gw = gw + l2 * W
        trace.append(loss)
        mw = b1 * mw + (1 - b1) * gw
        vw = b2 * vw + (1 - b2) * gw ** 2
        mb = b1 * mb + (1 - b1) * gb
        vb = b2 * vb + (1 - b2) * gb ** 2
        c1, c2 = 1 - b1 ** ep, 1 - b2 ** ep
        W = W - lr * (mw / c1) / (np.sqrt(vw / c2) + tiny)
        b = b - lr * (mb / c1) / (np.sqrt(vb / c2) + tiny)
    final, _, _ = nll_and_grad(W, b, lags, targets)
    trace.append(final)
    return LaggedSoftmaxLearner(W, b, trace)


def oracle_score(loss: float, h: float, h_max: float) -> float:
    """Excess loss normalized by the entropy headroom, ``(L_AR - H) / (H_max - H)``."""
    if h_max <= h:
        raise ValueError("oracle score needs H_max > H")
    return max(loss - h, 0.0) / (h_max - h)


# ---------------------------------------------------------------------------
# label posteriors


class LabelPosteriorEstimator:
    n_labels: int
    eps_c: float = EPS_C

    def label_posterior(self, prefix: Sequence[int]) -> np.ndarray:
        return self.posterior_series(np.asarray(prefix, dtype=np.int64)[None, :], [len(prefix) - 1])[0, 0]

    def posterior_series(self, batch: np.ndarray, ends) -> np.ndarray:
        """(B, E, J) label posteriors after each prefix ``batch[:, :e+1]``."""
        batch = np.asarray(batch, dtype=np.int64)
        return np.stack(
            [np.stack([self.label_posterior(row[: e + 1]) for e in ends]) for row in batch]
        )


def eval_rules_on_presence(rules: Sequence[tuple[int, Rule]], present: np.ndarray, n_labels: int) -> np.ndarray:
    """Vectorized rule evaluation over a boolean presence array (..., n) -> (..., J)."""

    def ev(r):
        kind = type(r).__name__
        if kind == "Atom":
            return present[..., r.event]
        if kind == "Not":
            return ~ev(r.child)
        parts = [ev(c) for c in r.children]
        out = parts[0].copy()
        for p in parts[1:]:
            out = (out & p) if kind == "And" else (out | p)
        return out

    res = np.zeros(present.shape[:-1] + (n_labels,), dtype=bool)
    for j, r in rules:
        res[..., j] = ev(r)
    return res


class RolloutLabelPosterior(LabelPosteriorEstimator):
    """Completion probability of each label rule under an event estimator.

    The posterior of a prefix ending at position ``e`` is the fraction of
    ``n_rollouts`` completions up to position ``horizon`` whose full sequence
    satisfies the rule, clamped to ``[eps_c, 1 - eps_c]``. Rollout ``r`` draws
    position ``t`` with the common uniform ``U[r, t]``, so results are a pure
    function of the prefix and consecutive prefixes are strongly coupled.
    """

    def __init__(self, oracle: EventDensityEstimator, plan: LabelPlan, horizon: int, n_rollouts: int = 128,
                 seed: int = 0, eps_c: float = EPS_C):
        if n_rollouts < 1:
            raise ValueError("n_rollouts must be at least 1")
        self.oracle = oracle
        self.plan = plan
        self.horizon = int(horizon)
        self.n_rollouts = int(n_rollouts)
        self.seed = seed
        self.eps_c = eps_c
        self.n_labels = plan.n_labels
        self._u = rng_for(seed, "rollout").random((self.n_rollouts, self.horizon + 1))

    def _suffix_presence(self, states: np.ndarray, start: np.ndarray) -> np.ndarray:
        """Presence (S, R, n) of events drawn after each state's prefix end."""
        S, W = states.shape
        R, n, H = self.n_rollouts, self.oracle.n_events, self.horizon
        steps = H - int(start.min())
        # rollout buffer holds the state window followed by the drawn suffix
        buf = np.repeat(states, R, axis=0)
        start_r = np.repeat(start, R)
        r_idx = np.tile(np.arange(R), S)
        buf = np.concatenate([buf, np.full((S * R, max(steps, 0)), self.oracle.cls_id, dtype=np.int64)], axis=1)
        present = np.zeros((S * R, n), dtype=bool)
        mem = self.oracle.memory
        for j in range(steps):
            t_abs = start_r + 1 + j  # absolute position being drawn
            live = t_abs <= H
            if not live.any():
                break
            col = W + j
            lo = 0 if mem is None else max(0, col - mem)
            rows = np.nonzero(live)[0]
            p = self.oracle.next_event_dist_batch(buf[rows, lo:col])
            tok = inverse_cdf(p, self._u[r_idx[rows], t_abs[rows]])
            buf[rows, col] = tok
            present[rows, tok] = True
        return present.reshape(S, R, n)

    def posterior_series(self, batch: np.ndarray, ends) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.int64)
        ends = np.asarray(list(ends), dtype=np.int64)
        B, T = batch.shape
        n = self.oracle.n_events
        if ends.max() > self.horizon:
            raise ValueError("prefix extends past the rollout horizon")
        mem = self.oracle.memory
        # prefix presence per (row, end)
        onehot = np.zeros((B, T, n + 1), dtype=bool)
        onehot[np.arange(B)[:, None], np.arange(T)[None, :], batch] = True
        onehot[:, 0, :] = False
        cum = np.logical_or.accumulate(onehot, axis=1)[:, :, :n]
        prefix_present = cum[:, ends, :]  # (B, E, n)
        if mem is None:
            out = np.zeros((B, len(ends), self.n_labels))
            for b in range(B):
                for ei, e in enumerate(ends):
                    suffix = self._suffix_presence(batch[b: b + 1, : e + 1], np.array([e]))[0]
                    sat = eval_rules_on_presence(self.plan.rules, prefix_present[b, ei][None, :] | suffix,
                                                 self.n_labels)
                    out[b, ei] = sat.mean(axis=0)
            return clamp(out, self.eps_c)
        # with finite memory, rollouts depend only on the last `mem` tokens and the
        # prefix end; leading start markers are inert for the lag-softmax family
        W = mem
        windows = np.full((B, len(ends), W), self.oracle.cls_id, dtype=np.int64)
        for ei, e in enumerate(ends):
            lo = max(0, e + 1 - W)
            windows[:, ei, W - (e + 1 - lo):] = batch[:, lo: e + 1]
        keys = np.concatenate([windows, np.broadcast_to(ends[None, :, None], (B, len(ends), 1))], axis=2)
        flat = keys.reshape(-1, W + 1)
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        suffix = self._suffix_presence(uniq[:, :W], uniq[:, W])  # (U, R, n)
        pres = prefix_present.reshape(-1, n)[:, None, :] | suffix[inverse]  # (B*E, R, n)
        sat = eval_rules_on_presence(self.plan.rules, pres, self.n_labels)
        post = sat.mean(axis=1).reshape(B, len(ends), self.n_labels)
        return clamp(post, self.eps_c)


class ExactLabelPosterior(LabelPosteriorEstimator):
    """Label posteriors by enumerating every completion up to ``horizon``.

    Exponential in the remaining length; meant for tiny vocabularies where it
    serves as the reference the rollout estimator approximates.
    """

    def __init__(self, oracle: EventDensityEstimator, plan: LabelPlan, horizon: int, eps_c: float = EPS_C,
                 max_paths: int = 1 << 20):
        self.oracle = oracle
        self.plan = plan
        self.horizon = int(horizon)
        self.eps_c = eps_c
        self.n_labels = plan.n_labels
        self.max_paths = max_paths
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def label_posterior(self, prefix):
        key = tuple(int(t) for t in prefix)
        if key in self._cache:
            return self._cache[key]
        n = self.oracle.n_events
        e = len(key) - 1
        if e > self.horizon:
            raise ValueError("prefix extends past the horizon")
        if n ** (self.horizon - e) > self.max_paths:
            raise ValueError("too many completions to enumerate")
        paths = np.asarray(key, dtype=np.int64)[None, :]
        weights = np.ones(1)
        present = np.zeros((1, n), dtype=bool)
        present[0, [t for t in key[1:] if t < n]] = True
        for _ in range(e + 1, self.horizon + 1):
            p = self.oracle.next_event_dist_batch(paths)  # (P, n)
            P = len(paths)
            paths = np.concatenate([np.repeat(paths, n, axis=0), np.tile(np.arange(n), P)[:, None]], axis=1)
            weights = (weights[:, None] * p).reshape(-1)
            present = np.repeat(present, n, axis=0)
            present[np.arange(P * n), paths[:, -1]] = True
            keep = weights > 0
            paths, weights, present = paths[keep], weights[keep], present[keep]
        sat = eval_rules_on_presence(self.plan.rules, present, self.n_labels)
        out = clamp(weights @ sat / weights.sum(), self.eps_c)
        self._cache[key] = out
        return out
