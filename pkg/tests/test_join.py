import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exfabric.fabric import Engine
from exfabric.ops.join import (JoinError, UniformBounds, find_boundary, hash_join_sum,
                               map_join_partitions)
from exfabric.ops.tables import ColumnTable, fk_tables

T = 16  # bytes per (key, val) tuple


def _table(pairs):
    k, v = zip(*pairs) if pairs else ((), ())
    return ColumnTable(np.array(k, dtype=np.uint64), np.array(v, dtype=np.uint64))


def _oracle(a, b):
    return sum(int(av) + int(bv) for ak, av in zip(a.key, a.val) for bk, bv in zip(b.key, b.val) if ak == bk) % 2**64


def test_find_boundary_examples():
    assert find_boundary(np.array([], dtype=np.uint64), 4).tolist() == [0] * 5
    assert find_boundary(np.zeros(7, dtype=np.uint64), 1).tolist() == [0, 7]
    assert find_boundary(np.array([1, 1, 3], dtype=np.uint64), 4).tolist() == [0, 0, 2, 2, 3]


def test_find_boundary_rejects_bad_input():
    with pytest.raises(JoinError):
        find_boundary(np.array([2, 1], dtype=np.uint64), 4)
    with pytest.raises(JoinError):
        find_boundary(np.array([0, 9], dtype=np.uint64), 4)


def test_map_join_half_buffer_gives_two_partitions():
    b = [np.array([0, 2, 4, 6, 8])]
    spec = map_join_partitions(b, b, 8 * T)
    assert spec.parts == 2
    assert spec.cuts == [0, 2, 4]
    assert spec.rows(0) == (4, 4)


def test_map_join_large_buffer_single_partition():
    b = [np.array([0, 2, 4, 6, 8])]
    assert map_join_partitions(b, b, 16 * T).parts == 1
    assert map_join_partitions(b, b, 10**6).parts == 1


def test_map_join_oversized_group_names_it():
    with pytest.raises(JoinError, match="hash group 1"):
        map_join_partitions([np.array([0, 1, 9, 10])], [np.array([0, 0, 0, 0])], 4 * T)


def test_map_join_mismatched_radix():
    with pytest.raises(JoinError):
        map_join_partitions([np.array([0, 1, 2])], [np.array([0, 1, 2, 3, 4])], 100 * T)


def test_uniform_bounds_sum_to_rows():
    u = UniformBounds(10, 4)
    assert len(u) == 5 and u[0] == 0 and u[4] == 10
    assert all(u[g] <= u[g + 1] for g in range(4))


def test_tiny_join():
    res = hash_join_sum(_table([(1, 10), (2, 20)]), _table([(2, 5)]), radix_bits=1, chunk_rows=2)
    assert res.total == 25


def test_empty_probe_side():
    assert hash_join_sum(_table([(1, 10)]), _table([]), radix_bits=2, chunk_rows=4).total == 0


def test_zero_chunk_rejected():
    with pytest.raises(JoinError):
        hash_join_sum(_table([(1, 1)]), _table([(1, 1)]), radix_bits=1, chunk_rows=0)


@settings(max_examples=40)
@given(na=st.integers(1, 40), nb=st.integers(0, 60), bits=st.integers(1, 4), chunk=st.integers(1, 17),
       seed=st.integers(0, 2**20))
def test_join_matches_nested_loop(na, nb, bits, chunk, seed):
    a, b = fk_tables(na, nb, seed)
    res = hash_join_sum(a, b, radix_bits=bits, chunk_rows=chunk, buffer_rows=max(2 * chunk, na + nb))
    assert res.total == _oracle(a, b)


def test_total_invariant_over_radix_and_chunk():
    a, b = fk_tables(3000, 5000, 7)
    totals = {hash_join_sum(a, b, radix_bits=r, chunk_rows=c, buffer_rows=8000).total
              for r in (4, 8, 12) for c in (700, 4096)}
    assert totals == {_oracle_fast(a, b)}


def _oracle_fast(a, b):
    vals = dict(zip(a.key.tolist(), a.val.tolist()))
    return sum(vals[k] + v for k, v in zip(b.key.tolist(), b.val.tolist()) if k in vals) % 2**64


def test_group_limit_enforced():
    a = _table([(k * 4, 1) for k in range(20)])
    with pytest.raises(JoinError, match="exceeds limit"):
        hash_join_sum(a, a, radix_bits=2, chunk_rows=20, buffer_rows=64, group_limit=5)


def test_phantom_join_phases():
    res = hash_join_sum(10**8, 10**8, radix_bits=16, chunk_rows=10**7, engine=Engine())
    assert res.total is None
    assert set(res.shares()) == {"partition_a", "partition_b", "join"}
    assert res.tuples == 2 * 10**8
