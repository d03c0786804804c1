"""Thread-pool helpers honoring the NEUROPGM_THREADS cap.

Parallelism in this package is limited to embarrassingly parallel maps
over subjects or voxels; results are always reduced in input order so
the outcome is independent of scheduling.  Setting NEUROPGM_THREADS=1
forces sequential execution and bit-reproducible results.
"""

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["thread_count", "ordered_map"]


def thread_count():
    """Parallelism cap from NEUROPGM_THREADS, defaulting to the core count."""
    raw = os.environ.get("NEUROPGM_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(
                "NEUROPGM_THREADS must be an integer, got %r" % raw) from None
        return max(1, n)
    return os.cpu_count() or 1


def ordered_map(fn, items):
    """Map ``fn`` over ``items``, preserving order in the result list.

    Runs sequentially when the thread cap is 1 or there is at most one
    item; otherwise uses a thread pool.  ``fn`` must not mutate shared
    state.
    """
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
