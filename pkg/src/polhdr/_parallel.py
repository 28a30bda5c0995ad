"""Row-block parallelism with schedule-independent output."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def _row_blocks(h: int, threads: int):
    n = max(1, min(threads, h))
    edges = np.linspace(0, h, n + 1).astype(int)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def run_rows(fn, h: int, threads: int = 1):
    """Call ``fn(r0, r1)`` on row blocks, in a thread pool when threads > 1.

    Each block writes a disjoint slice of the output, so results do not depend
    on the thread count.
    """
    blocks = _row_blocks(h, threads)
    if threads <= 1 or len(blocks) == 1:
        for a, b in blocks:
            fn(a, b)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda ab: fn(*ab), blocks))
