"""Process-pool execution of independent training jobs."""
from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from typing import TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def run_parallel(job: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Apply ``job`` to every item, returning results in item order.

    Jobs must be picklable and must not depend on each other; with
    ``workers <= 1`` they run in-process. The first failing job's exception is
    re-raised.
    """

    if workers <= 1 or len(items) <= 1:
        return [job(item) for item in items]
    chunksize = max(1, len(items) // (workers * 4))
    logger.debug("Dispatching %d jobs to %d processes", len(items), workers)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(job, items, chunksize=chunksize))
