import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from exfabric import kernels

BACKENDS = sorted(kernels.BACKENDS)
u64s = hnp.arrays(np.uint64, st.integers(0, 60), elements=st.integers(0, 40).map(np.uint64))


def _brute_join(ak, av, bk, bv):
    return sum(int(a_v) + int(b_v) for a_k, a_v in zip(ak, av) for b_k, b_v in zip(bk, bv) if a_k == b_k) % 2**64


def test_backend_selection():
    assert kernels.BACKEND in kernels.BACKENDS
    with pytest.raises(ValueError):
        kernels.backend("fortran")


@pytest.mark.parametrize("name", BACKENDS)
def test_find_boundary_hand_trace(name):
    k = kernels.backend(name)
    assert k.find_boundary(np.array([0, 0, 2, 3], dtype=np.uint64), 4).tolist() == [0, 2, 2, 3, 4]
    assert k.find_boundary(np.array([], dtype=np.uint64), 3).tolist() == [0, 0, 0, 0]
    assert k.find_boundary(np.zeros(5, dtype=np.uint64), 1).tolist() == [0, 5]


@pytest.mark.parametrize("name", BACKENDS)
@given(keys=u64s, bits=st.integers(1, 5), seed=st.integers(0, 2**16))
def test_join_sum_matches_nested_loop(name, keys, bits, seed):
    k = kernels.backend(name)
    rng = np.random.default_rng(seed)
    av = rng.integers(0, 2**64, keys.size, dtype=np.uint64, endpoint=False)
    bk = rng.integers(0, 45, rng.integers(0, 40)).astype(np.uint64)
    bv = rng.integers(0, 2**64, bk.size, dtype=np.uint64, endpoint=False)
    total, _ = k.join_sum(keys, av, bk, bv, bits)
    assert total == _brute_join(keys, av, bk, bv)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
@given(a=u64s, b=u64s, bits=st.integers(0, 6))
def test_backends_agree(a, b, bits):
    py, cy = kernels.backend("python"), kernels.backend("cython")
    vals = np.arange(a.size, dtype=np.uint64)
    for x, y in zip(py.radix_cluster(a, vals, bits), cy.radix_cluster(a, vals, bits)):
        assert np.array_equal(x, y)
    sa, sb = np.sort(a), np.sort(b)
    assert np.array_equal(py.merge_sorted(sa, sb), cy.merge_sorted(sa, sb))
    h = np.sort(a & np.uint64((1 << bits) - 1))
    assert np.array_equal(py.find_boundary(h, 1 << bits), cy.find_boundary(h, 1 << bits))
    bv = np.arange(b.size, dtype=np.uint64)
    assert py.join_sum(a, vals, b, bv, max(bits, 1)) == cy.join_sum(a, vals, b, bv, max(bits, 1))


@pytest.mark.parametrize("name", BACKENDS)
def test_radix_cluster_is_stable(name):
    k = kernels.backend(name)
    keys = np.array([5, 2, 7, 4, 1, 3], dtype=np.uint64)
    vals = np.arange(6, dtype=np.uint64)
    ok, ov = k.radix_cluster(keys, vals, 1)
    assert ok.tolist() == [2, 4, 5, 7, 1, 3]
    assert ov.tolist() == [1, 3, 0, 2, 4, 5]


def test_env_var_forces_python_fallback():
    import os
    import subprocess
    import sys
    env = dict(os.environ, EXFABRIC_PURE_PYTHON="1")
    code = ("from exfabric import kernels; import numpy as np; "
            "print(kernels.BACKEND, kernels.join_sum(np.array([1, 2], dtype=np.uint64), np.array([10, 20], dtype=np.uint64),"
            " np.array([2], dtype=np.uint64), np.array([5], dtype=np.uint64), 1)[0])")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out.split() == ["python", "25"]
