"""Thread-pool map capped by HYPERCLOUD_THREADS.

numpy and scipy release the GIL in the heavy kernels, so threads are enough
for filling distance matrices cell by cell.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable

from tqdm.auto import tqdm

from hypercloud.config import thread_count

log = logging.getLogger(__name__)


def parallel_map(fn: Callable, items: Iterable, desc: str | None = None, threads: int | None = None) -> list:
    """Apply `fn` to every item, results in input order."""
    items = list(items)
    threads = threads or thread_count()
    show = desc is not None and log.isEnabledFor(logging.INFO) and len(items) > 1
    with tqdm(total=len(items), desc=desc, disable=not show) as bar:
        if threads <= 1 or len(items) <= 1:
            results = []
            for item in items:
                results.append(fn(item))
                bar.update()
            return results
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = []
            for r in pool.map(fn, items):
                results.append(r)
                bar.update()
            return results
