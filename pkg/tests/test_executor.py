import numpy as np
import pytest

from exfabric.exchange import RefGroup
from exfabric.executor import (ChunkMap, ChunkOverflowError, CostModel, ExecutorError, ExKernelSpec, chain,
                               contiguous_chunks, identity_spec, run_exkernel)
from exfabric.fabric import HOST, Engine, MemRef, build_topology


def _identity_setup(engine, n_bytes, chunk):
    if engine.real:
        src = engine.put_host(np.arange(n_bytes // 8, dtype=np.uint64))
    else:
        src = engine.put_host(n_bytes)
    dst = engine.alloc(HOST, n_bytes)
    return src, dst, identity_spec(contiguous_chunks(src, chunk), contiguous_chunks(dst, chunk), chunk)


def test_identity_round_trip_is_byte_equal():
    e = Engine(payload_mode="real")
    src, dst, spec = _identity_setup(e, 8000, 2000)
    rep = run_exkernel(e, spec, packet=512)
    assert np.array_equal(e.view(dst), e.view(src))
    assert len(rep.per_cycle) == 4 + 2
    assert rep.compute_total == 0
    assert rep.total == pytest.approx(rep.io_total)


def test_single_chunk_degenerates_to_sequential():
    e = Engine(payload_mode="real")
    src, dst, spec = _identity_setup(e, 800, 800)
    rep = run_exkernel(e, spec)
    assert [c["cycle"] for c in rep.per_cycle] == [0, 1, 2]
    assert rep.per_cycle[0]["io_s"] > 0 and rep.per_cycle[2]["io_s"] > 0
    assert np.array_equal(e.view(dst), e.view(src))


def _compute_bound_spec(engine, n_chunks, chunk_bytes, elements):
    src = engine.put_host(n_chunks * chunk_bytes)
    dst = engine.alloc(HOST, n_chunks * chunk_bytes)
    spec = identity_spec(contiguous_chunks(src, chunk_bytes), contiguous_chunks(dst, chunk_bytes), chunk_bytes)
    spec.cost_kind = "sort"
    spec.elements = lambda it: elements
    return spec


def test_compute_bound_steady_state_equals_kernel_time():
    e = Engine()
    # 4GB each way takes well under the 208 ms kernel
    spec = _compute_bound_spec(e, 6, 4_000_000_000, 500_000_000)
    rep = run_exkernel(e, spec, CostModel(sort=208e-3 / 5e8))
    steady = [c for c in rep.per_cycle if 2 <= c["cycle"] <= 5]
    assert all(c["io_s"] < 0.208 for c in steady)
    assert all(c["wall_s"] == pytest.approx(0.208) for c in steady)


def test_overlap_bounds_hold():
    e = Engine()
    spec = _compute_bound_spec(e, 8, 1_000_000_000, 300_000_000)
    rep = run_exkernel(e, spec, CostModel(sort=1e-10))
    n = 8
    ios = [c["io_s"] for c in rep.per_cycle]
    comps = [c["compute_s"] for c in rep.per_cycle if c["compute_s"] > 0]
    assert rep.total <= (n + 2) * max(max(ios), max(comps)) + 1e-9
    assert rep.total >= n * max(min(i for i in ios if i > 0), min(comps)) - 1e-9


def test_kernel_and_exchange_never_share_a_buffer():
    e = Engine()
    rep = run_exkernel(e, _compute_bound_spec(e, 5, 10**8, 10**6))
    for c in rep.per_cycle:
        if c["kernel_buffer"] is not None and c["io_buffer"] is not None:
            assert c["kernel_buffer"] != c["io_buffer"]


def test_output_independent_of_cost_model():
    outs = []
    for cost in (CostModel(), CostModel(identity=1e-3)):
        e = Engine(payload_mode="real")
        src, dst, spec = _identity_setup(e, 4000, 1000)
        run_exkernel(e, spec, cost)
        outs.append(e.view(dst).copy())
    assert np.array_equal(*outs)


def test_overflow_is_an_error():
    e = Engine(payload_mode="real")
    src, dst, spec = _identity_setup(e, 800, 400)
    spec.declared_out_len = 100
    with pytest.raises(ChunkOverflowError):
        run_exkernel(e, spec)


def test_chunk_over_capacity_rejected():
    with pytest.raises(ExecutorError):
        ChunkMap([RefGroup([MemRef(HOST, 0, 100)])], 50)


def test_overlapping_chunks_rejected():
    with pytest.raises(ExecutorError):
        ChunkMap([RefGroup([MemRef(HOST, 0, 100)]), RefGroup([MemRef(HOST, 50, 100)])], 100)


def test_layout_must_fit_device_memory():
    e = Engine(build_topology({"device_mem": 1000}))
    src = e.put_host(2000)
    dst = e.alloc(HOST, 2000)
    spec = identity_spec(contiguous_chunks(src, 1000), contiguous_chunks(dst, 1000), 1000)
    with pytest.raises(ExecutorError, match="layout"):
        run_exkernel(e, spec)


def test_chain_of_one_matches_run_exkernel():
    a, b = Engine(), Engine()
    r1 = run_exkernel(a, _compute_bound_spec(a, 3, 10**8, 10**6))
    r2 = chain(b, [_compute_bound_spec(b, 3, 10**8, 10**6)])
    assert len(r2) == 1 and r2[0].to_dict() == r1.to_dict()


def test_chain_rejects_unproduced_inputs():
    e = Engine(payload_mode="real")
    src, mid, first = _identity_setup(e, 800, 400)
    stray = e.put_host(np.zeros(100, dtype=np.uint64))
    out = e.alloc(HOST, 800)
    second = identity_spec(contiguous_chunks(stray, 400), contiguous_chunks(out, 400), 400)
    with pytest.raises(ExecutorError, match="not produced"):
        chain(e, [first, second])


def test_chain_two_identities_end_to_end():
    e = Engine(payload_mode="real")
    src, mid, first = _identity_setup(e, 1600, 400)
    out = e.alloc(HOST, 1600)
    reports = chain(e, [first, lambda: identity_spec(contiguous_chunks(mid, 400), contiguous_chunks(out, 400), 400)])
    assert len(reports) == 2
    assert np.array_equal(e.view(out), e.view(src))


def test_report_json_schema():
    e = Engine()
    d = run_exkernel(e, _compute_bound_spec(e, 2, 10**6, 10)).to_dict()
    assert set(d) == {"phase", "cycles", "total_s"}
    assert set(d["cycles"][0]) == {"io_s", "compute_s"}


def test_cost_model_rejects_negative_and_unknown():
    with pytest.raises(ExecutorError):
        CostModel(sort=-1)
    with pytest.raises(ExecutorError):
        CostModel().seconds("fft", 10)
    assert CostModel().seconds("join", 5e8) == pytest.approx(34e-3)


def test_kernel_must_return_binary_code():
    e = Engine(payload_mode="real")
    src, dst, spec = _identity_setup(e, 800, 400)
    spec.kernel = lambda mem, code, it, tmp: 2
    with pytest.raises(ExecutorError, match="layout code"):
        run_exkernel(e, spec)
