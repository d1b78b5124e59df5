"""Deterministic replicate-parallel execution.

Work is split into fixed-size chunks of replicate indices; chunk boundaries
depend only on the chunk size, never on the worker count, and results are
consumed in chunk order.  Together with per-replicate derived streams this
makes every aggregate byte-identical whatever ``threads`` is.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def default_threads() -> int:
    env = os.environ.get("RMS_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def chunk_ranges(n_items: int, chunk_size: int):
    """[(start, count), ...] covering range(n_items) in order."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    return [(s, min(chunk_size, n_items - s))
            for s in range(0, n_items, chunk_size)]


def map_chunks(fn, n_items: int, args: tuple = (), *, threads: int = 1,
               chunk_size: int = 1024) -> list:
    """Run ``fn(start, count, *args)`` over fixed chunks, results in order.

    ``fn`` must be picklable (module-level) when threads > 1.
    """
    chunks = chunk_ranges(n_items, chunk_size)
    if threads <= 1 or len(chunks) <= 1:
        return [fn(start, count, *args) for start, count in chunks]
    with ProcessPoolExecutor(max_workers=min(threads, len(chunks))) as pool:
        futures = [pool.submit(fn, start, count, *args)
                   for start, count in chunks]
        return [f.result() for f in futures]
