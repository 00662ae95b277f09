from fractions import Fraction

import numpy as np
import pytest

from exfabric.fabric import Engine
from exfabric.ops.latemat import (EXCHANGE, ZERO_COPY, LateMatPolicy, choose_transfer_mode,
                                  late_mat_threshold, selective_scan, strided_touched_bytes,
                                  touched_lines)


def test_threshold_values():
    assert late_mat_threshold(4) == Fraction(1, 64)
    assert late_mat_threshold(8, 64, 4) == Fraction(1, 32)
    assert LateMatPolicy(element_size=4).threshold == Fraction(1, 64)


def test_threshold_validation():
    with pytest.raises(ValueError):
        late_mat_threshold(0)
    with pytest.raises(ValueError):
        LateMatPolicy(element_size=512)


def test_mode_choice_edges():
    p = LateMatPolicy()
    assert choose_transfer_mode(1.0, p) == EXCHANGE
    assert choose_transfer_mode(1 / 64, p) == EXCHANGE
    assert choose_transfer_mode(1 / 256, p) == ZERO_COPY
    with pytest.raises(ValueError):
        choose_transfer_mode(1.5, p)


def test_touched_lines():
    assert touched_lines(np.array([0, 1, 15, 16, 17]), 4, 64) == 2
    assert touched_lines(np.array([], dtype=np.int64), 4, 64) == 0


def test_strided_bytes():
    assert strided_touched_bytes(1024, 1, 4, 64) == 4096
    assert strided_touched_bytes(1024, 16, 4, 64) == 64 * 64
    assert strided_touched_bytes(1024, 4, 4, 64) == 4096


def test_scan_aggregate_is_mode_independent():
    col = np.arange(1000, dtype=np.uint32)
    a = selective_scan(col, 7, EXCHANGE)
    b = selective_scan(col, 7, ZERO_COPY)
    assert a.aggregate == b.aggregate == int(col[::7].sum())


def test_scan_crossover_direction():
    n = 1 << 24
    for sel, winner in [(4, EXCHANGE), (1024, ZERO_COPY)]:
        ex = selective_scan(n, sel, EXCHANGE, Engine()).seconds
        zc = selective_scan(n, sel, ZERO_COPY, Engine()).seconds
        assert (ex < zc) == (winner == EXCHANGE)


def test_scan_rejects_bad_args():
    with pytest.raises(ValueError):
        selective_scan(10, 0, EXCHANGE)
    with pytest.raises(ValueError):
        selective_scan(10, 2, "teleport")
