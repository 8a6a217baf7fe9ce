"""Order-preserving map over independent work items (multi-starts)."""

import os
from concurrent.futures import ThreadPoolExecutor


def max_workers() -> int:
    """Worker cap from ``RIPHS_THREADS`` (default 1, i.e. sequential)."""
    try:
        return max(1, int(os.environ.get("RIPHS_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
