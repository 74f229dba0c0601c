"""Process-pool fan-out whose results do not depend on the worker count."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_THREADS = "FSSKIT_THREADS"


def worker_cap() -> int | None:
    raw = os.environ.get(ENV_THREADS)
    if not raw:
        return None
    try:
        return max(1, int(raw))
    except ValueError:
        return None


def resolve_workers(requested: int | None) -> int:
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = worker_cap()
    if cap is not None:
        n = min(n, cap)
    return max(1, n)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = 1) -> list[R]:
    """Ordered map; every job carries its own RNG key, so output is stable."""
    items = list(items)
    n = resolve_workers(workers)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * n))))
