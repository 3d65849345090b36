"""
Row-partitioned execution on a thread pool.

Every per-pixel kernel in the package is independent across rows, so the image
is cut into contiguous row blocks, each block is computed by the same function
and the blocks are concatenated in row order. The result is bit-identical for
any thread count.
"""

from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np


def row_blocks(n_rows: int, threads: int) -> list[tuple[int, int]]:
    threads = max(1, min(int(threads), n_rows))
    bounds = np.linspace(0, n_rows, threads + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def map_rows(fn: Callable[[int, int], tuple[np.ndarray, ...]], n_rows: int,
             threads: int = 1) -> tuple[np.ndarray, ...]:
    """Run fn(row_start, row_stop) over row blocks; concatenate outputs along axis 0."""
    if n_rows <= 0:
        return fn(0, 0)
    blocks = row_blocks(n_rows, threads)
    if len(blocks) == 1:
        return fn(*blocks[0])
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        parts = list(pool.map(lambda b: fn(*b), blocks))
    return tuple(np.concatenate(chunk, axis=0) for chunk in zip(*parts))
