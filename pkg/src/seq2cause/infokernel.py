"""Information-theoretic primitives shared by OSCAR and TRACE.

All quantities are in nats. Functions broadcast over leading axes so that
particle and position loops stay inside numpy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ShapeError
from .rng import rng_for

EPS_C = 1e-6


class ConfigError(ValueError):
    pass


def clamp(p, eps: float = EPS_C):
    return np.clip(p, eps, 1.0 - eps)


def binary_kl(p, q):
    """KL(Bern(p) || Bern(q)). Inputs should already be clamped into (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    out = p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q))
    # rounding can leave tiny negatives when p == q
    return np.maximum(out, 0.0)


def categorical_kl(p, q, eps: float = EPS_C):
    """KL(p || q) along the last axis; ``q`` is floored at ``eps`` and renormalized."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1] != q.shape[-1]:
        raise ShapeError(f"support sizes differ: {p.shape[-1]} vs {q.shape[-1]}")
    q = np.maximum(q, eps)
    q = q / q.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=-1)


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SamplingConfig:
    n_particles: int = 68
    top_k: int = 35
    top_p: float = 0.8
    temperature: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ConfigError("n_particles must be at least 1")
        if self.top_k < 1:
            raise ConfigError("top_k must be at least 1")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError("top_p must lie in (0, 1]")
        if self.temperature is not None and self.temperature <= 0:
            raise ConfigError("temperature must be positive")


def topk_p_filter(probs, top_k: int, top_p: float, temperature: float | None = None) -> np.ndarray:
    """Top-k then nucleus truncation, renormalized. Works on (..., n).

    Candidates are ranked by probability with ties going to the lower id. In
    the ranked top-k list, every entry whose running mass exceeds ``top_p`` is
    dropped except the first one.
    """
    probs = np.asarray(probs, dtype=np.float64)
    shape = probs.shape
    p2 = probs.reshape(-1, shape[-1])
    if temperature is not None and temperature != 1.0:
        with np.errstate(divide="ignore"):
            logp = np.log(p2) / temperature
        logp -= logp.max(axis=-1, keepdims=True)
        p2 = np.exp(logp)
        p2 /= p2.sum(axis=-1, keepdims=True)
    k = min(top_k, shape[-1])
    order = np.argsort(-p2, axis=-1, kind="stable")[:, :k]
    top = np.take_along_axis(p2, order, axis=-1)
    top = top / top.sum(axis=-1, keepdims=True)
    if top_p < 1.0:
        drop = np.cumsum(top, axis=-1) > top_p
        drop[:, 0] = False
        top = np.where(drop, 0.0, top)
        top /= top.sum(axis=-1, keepdims=True)
    out = np.zeros_like(p2)
    np.put_along_axis(out, order, top, axis=-1)
    return out.reshape(shape)


def inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf < (u * cdf[..., -1])[..., None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def topk_p_sample(dist, top_k: int, top_p: float, temperature: float | None = None, rng=None) -> int:
    rng = np.random.default_rng() if rng is None else rng
    f = topk_p_filter(np.asarray(dist)[None, :], top_k, top_p, temperature)
    return int(inverse_cdf(f, np.array([rng.random()]))[0])


def context_uniforms(seed: int, n_particles: int, length: int, stream: str = "context") -> np.ndarray:
    """Per-particle uniforms; row ``l`` comes from its own stream keyed on (seed, l)."""
    return np.stack([rng_for((seed, l), stream).random(length) for l in range(n_particles)])


def sample_context_particles(prefix: Sequence[int], estimator, c: int, sampling: SamplingConfig) -> np.ndarray:
    """(N, T) particles: positions 1..c-1 redrawn autoregressively, the rest copied.

    Position 0 stays the start marker. Draws use top-k/nucleus truncation.
    """
    tokens = np.asarray(prefix, dtype=np.int64)
    T = len(tokens)
    if not 1 <= c < T:
        raise ConfigError(f"context c={c} must satisfy 1 <= c < {T}")
    N = sampling.n_particles
    parts = np.repeat(tokens[None, :], N, axis=0)
    parts[:, 0] = estimator.cls_id
    u = context_uniforms(sampling.seed, N, c)
    for t in range(1, c):
        p = estimator.next_event_dist_batch(parts[:, :t])
        f = topk_p_filter(p, sampling.top_k, sampling.top_p, sampling.temperature)
        parts[:, t] = inverse_cdf(f, u[:, t])
    return parts


# ---------------------------------------------------------------------------
# estimators over particles


@dataclass(frozen=True, eq=False)
class CmiSeries:
    values: np.ndarray  # (positions, targets)
    positions: np.ndarray  # prefix-end index i of each row
    n_particles: int
    context: int


def cmi_estimate(p_with, p_without, axis: int = 0, kind: str = "binary", eps: float = EPS_C):
    """Mean over particles (``axis``) of KL(with || without)."""
    if np.shape(p_with) != np.shape(p_without):
        raise ShapeError("particle arrays must have the same shape")
    if kind == "binary":
        terms = binary_kl(clamp(p_with, eps), clamp(p_without, eps))
    elif kind == "categorical":
        terms = categorical_kl(p_with, p_without, eps)
    else:
        raise ValueError(f"unknown target kind {kind!r}")
    return terms.mean(axis=axis)


def dynamic_threshold(series, k: float = 2.75):
    """Per-target ``tau = mean + k * std`` over the position axis (axis 0).

    Returns ``(tau, mask)`` with ``mask = series >= tau``. The standard
    deviation is the population one.
    """
    s = np.asarray(series.values if isinstance(series, CmiSeries) else series, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
        squeeze = True
    else:
        squeeze = False
    if s.shape[0] < 2:
        raise ValueError("dynamic threshold needs at least two positions per target")
    flat = np.ptp(s, axis=0) == 0
    # exact statistics for constant columns; summation rounding would otherwise nudge tau above them
    mu = np.where(flat, s[0], s.mean(axis=0))
    sd = np.where(flat, 0.0, s.std(axis=0))
    with np.errstate(invalid="ignore"):
        tau = mu + k * sd if np.isfinite(k) else np.where(sd > 0, np.inf, mu)
    mask = s >= tau
    if squeeze:
        return tau[0], mask[:, 0]
    return tau, mask


def ace(p_with, p_without, axis: int = 0):
    """Mean and population std of ``p_with - p_without`` over particles."""
    d = np.asarray(p_with, dtype=np.float64) - np.asarray(p_without, dtype=np.float64)
    return d.mean(axis=axis), d.std(axis=axis)


def pmi(joint, marg_a, marg_b, delta: float):
    if delta <= 0:
        raise ValueError("smoothing delta must be positive")
    return np.log((np.asarray(joint) + delta) / ((np.asarray(marg_a) + delta) * (np.asarray(marg_b) + delta)))


def pmi_table(present: np.ndarray, labels: np.ndarray):
    """PMI between event presence (S, n) and label bits (S, J) over a corpus.

    Smoothing for label j is half a pseudo-count, ``1 / (2 * m_j)``.
    """
    present = np.asarray(present, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    S = present.shape[0]
    joint = labels.T @ present / S  # (J, n)
    pe = present.mean(axis=0)
    pl = labels.mean(axis=0)
    m = np.maximum(labels.sum(axis=0), 1.0)
    delta = 1.0 / (2.0 * m)
    return np.log((joint + delta[:, None]) / ((pl[:, None] + delta[:, None]) * (pe[None, :] + delta[:, None])))
