import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from exfabric.executor import ExecutorError
from exfabric.fabric import Engine
from exfabric.ops.sort import find_pivots, phantom_pivots, sort_out_of_core
from exfabric.ops.tables import uniform_u64


def _runs(*rs):
    return [np.array(r, dtype=np.uint64) for r in rs]


def _partitions(runs, ps):
    return [np.sort(np.concatenate([runs[r][a:b] for r, a, b in ps.segments(k)] or [np.empty(0, np.uint64)]))
            for k in range(ps.parts)]


def test_tiny_sort():
    assert sort_out_of_core(np.array([3, 1, 2], dtype=np.uint64), 2).output.tolist() == [1, 2, 3]


def test_chunk_smaller_than_element_rejected():
    with pytest.raises(ExecutorError):
        sort_out_of_core(np.array([1], dtype=np.uint64), 0)


def test_empty_input_rejected():
    with pytest.raises(ExecutorError):
        sort_out_of_core(np.array([], dtype=np.uint64), 4)


@pytest.mark.parametrize("seed", range(5))
def test_million_elements_match_oracle(seed):
    data = uniform_u64(10**6, seed)
    assert np.array_equal(sort_out_of_core(data, 1 << 17).output, np.sort(data))


def test_duplicates_and_extremes():
    data = np.array([2**64 - 1, 0, 5, 5, 5, 2**64 - 1, 0, 7] * 13, dtype=np.uint64)
    assert np.array_equal(sort_out_of_core(data, 9).output, np.sort(data))


def test_pivots_range_disjoint_runs():
    runs = _runs([1, 2], [3, 4])
    assert [p.tolist() for p in _partitions(runs, find_pivots(runs, 2))] == [[1, 2], [3, 4]]


def test_pivots_interleaved_runs_match_enumeration():
    runs = _runs([1, 3], [2, 4])
    parts = _partitions(runs, find_pivots(runs, 2))
    # every cut (i, j) with i + j = 2 whose ranges are ordered; only one exists
    ok = [(i, j) for i, j in itertools.product(range(3), repeat=2)
          if i + j == 2 and max(list(runs[0][:i]) + list(runs[1][:j])) <= min(list(runs[0][i:]) + list(runs[1][j:]))]
    assert ok == [(1, 1)]
    assert [p.tolist() for p in parts] == [[1, 2], [3, 4]]


def test_pivots_all_equal():
    runs = _runs([5, 5], [5, 5])
    ps = find_pivots(runs, 2)
    assert [ps.part_size(k) for k in range(2)] == [2, 2]
    assert ps.cuts == [[0, 0], [2, 0], [2, 2]]


@given(st.lists(hnp.arrays(np.uint64, st.integers(1, 12), elements=st.integers(0, 6).map(np.uint64)),
                min_size=1, max_size=5))
def test_pivot_partitions_exact_and_ordered(raw):
    runs = [np.sort(r) for r in raw]
    c = max(r.size for r in runs)
    ps = find_pivots(runs, part_size=c)
    total = sum(r.size for r in runs)
    sizes = [ps.part_size(k) for k in range(ps.parts)]
    assert sum(sizes) == total
    assert all(s == c for s in sizes[:-1]) and 0 < sizes[-1] <= c
    parts = _partitions(runs, ps)
    for lo, hi in zip(parts, parts[1:]):
        assert lo.max() <= hi.min()


def test_phantom_pivots_exact_sizes():
    ps = phantom_pivots([10, 10, 7], 10)
    assert [ps.part_size(k) for k in range(ps.parts)] == [10, 10, 7]
    assert ps.cuts[-1] == [10, 10, 7]


def test_phantom_sort_reports_two_phases():
    res = sort_out_of_core(10**9, 10**8, Engine())
    assert [r.phase for r in res.reports] == ["sort", "merge"]
    assert res.output is None
    assert res.share("sort") + res.share("merge") == pytest.approx(1.0)
