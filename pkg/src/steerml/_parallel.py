"""Order-preserving worker pool used by grid search and candidate scoring.

Results are always merged in input order, never completion order, so a
parallel run reduces to exactly the same value as a sequential one.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
