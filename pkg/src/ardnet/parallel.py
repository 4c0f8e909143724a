"""Deterministic parallel map over picklable work items.

Results are returned in submission order and every item derives its own
random stream from its index, so output is identical for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def _limit_blas():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def parallel_map(fn, items, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    chunk = max(1, len(items) // (threads * 8))
    with ProcessPoolExecutor(max_workers=threads, mp_context=ctx,
                             initializer=_limit_blas) as ex:
        return list(ex.map(fn, items, chunksize=chunk))
