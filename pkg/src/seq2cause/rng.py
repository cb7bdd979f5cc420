"""Seeded RNG streams and a schedule-independent process map."""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def _stream_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")


def _flatten(seed) -> list[int]:
    if seed is None:
        return [0]
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    out: list[int] = []
    for s in seed:
        out.extend(_flatten(s))
    return out


def rng_for(seed, stream: str = "") -> np.random.Generator:
    """Generator keyed on a seed (int or nested tuple of ints) and a stream name.

    Distinct keys give statistically independent streams, so work items can
    draw their own randomness no matter which worker executes them.
    """
    key = [abs(k) for k in _flatten(seed)] + [_stream_key(stream)]
    return np.random.default_rng(key)


def default_workers() -> int:
    env = os.environ.get("SEQ2CAUSE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def pmap(fn: Callable[[T], R], items: Sequence[T], workers: int = 1, chunksize: int = 1) -> list[R]:
    """Ordered map; results do not depend on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))


class TaskError(RuntimeError):
    """A work item failed; ``index`` points at it."""

    def __init__(self, index: int, cause: BaseException, what: str = "item"):
        super().__init__(f"{what} {index}: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause


def pmap_attributed(fn: Callable[[T], R], items: Sequence[T], workers: int = 1, what: str = "item") -> list[R]:
    """``pmap`` that reports which item failed.

    On failure the items are replayed serially to find the first bad one.
    """
    items = list(items)
    try:
        return pmap(fn, items, workers)
    except Exception as first:
        for i, x in enumerate(items):
            try:
                fn(x)
            except Exception as exc:
                raise TaskError(i, exc, what) from exc
        raise first
