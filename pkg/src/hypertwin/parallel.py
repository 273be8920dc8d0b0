"""Process-pool mapping with a serial fallback."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence


def resolve_jobs(jobs: int | None) -> int:
    """``None`` or 0 means one worker per CPU."""
    if not jobs:
        return os.cpu_count() or 1
    if jobs < 0:
        raise ValueError("jobs must be positive")
    return jobs


def pmap(func: Callable, items: Sequence | Iterable, jobs: int | None = 1, chunksize: int | None = None) -> list:
    """Ordered ``[func(x) for x in items]``, spread over ``jobs`` processes.

    ``func`` must be picklable (a module-level function or instance).
    """
    items = list(items)
    jobs = min(resolve_jobs(jobs), max(1, len(items)))
    if jobs == 1:
        return [func(x) for x in items]
    if chunksize is None:
        chunksize = max(1, len(items) // (jobs * 8))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items, chunksize=chunksize))
