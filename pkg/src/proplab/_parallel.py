"""Ordered per-day map over a thread pool.

The compiled kernels and the FFTs release the GIL, so threads give real
speed-ups. ``PROPLAB_THREADS`` caps the pool (default: CPU count); results are
always returned in input order, which keeps every reduction deterministic.
"""
import os
from concurrent.futures import ThreadPoolExecutor


def n_threads() -> int:
    env = os.environ.get("PROPLAB_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def map_ordered(fn, items):
    items = list(items)
    workers = min(n_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
