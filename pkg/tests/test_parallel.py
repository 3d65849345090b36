from __future__ import annotations

import numpy as np

from app.utils.parallel import map_rows, row_blocks


def _rows(start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.arange(start, stop, dtype=np.float64)
    return r, np.stack([r, -r], axis=1)


def test_row_blocks_cover_every_row_once():
    blocks = row_blocks(10, 3)
    assert blocks[0][0] == 0 and blocks[-1][1] == 10
    assert all(a[1] == b[0] for a, b in zip(blocks, blocks[1:]))
    assert row_blocks(2, 8) == [(0, 1), (1, 2)]


def test_map_rows_is_thread_count_invariant():
    one = map_rows(_rows, 37, threads=1)
    many = map_rows(_rows, 37, threads=5)
    for a, b in zip(one, many):
        np.testing.assert_array_equal(a, b)


def test_map_rows_on_zero_rows_returns_empty_outputs():
    values, pairs = map_rows(_rows, 0, threads=4)
    assert values.shape == (0,)
    assert pairs.shape == (0, 2)
