import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exfabric.fabric import (HOST, Engine, FabricError, Flow, MemRef, Topology, allocate_rates, build_topology,
                             load_topology, path_resources, resource_capacity)


def _flow(fid, src, dst):
    return Flow(src, dst, 1e9, fid)


def test_defaults_from_empty_config():
    t = build_topology({})
    assert (t.num_devices, t.link_bw, t.host_cap, t.fabric_bw, t.d2h_priority) == (4, 28e9, 150e9, 100e9, True)


def test_single_device_topology():
    assert build_topology({"num_devices": 1}).num_devices == 1


@pytest.mark.parametrize("cfg", [{"link_bw": 0}, {"host_cap": -1.0}, {"num_devices": 0}, {"fabric_bw": 0}])
def test_rejects_non_positive(cfg):
    with pytest.raises(FabricError):
        build_topology(cfg)


def test_rejects_unknown_key():
    with pytest.raises(FabricError, match="unknown"):
        build_topology({"lnk_bw": 1})


def test_load_topology_accepts_nested_document(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"topology": {"host_cap": 112e9}}))
    assert load_topology(p).host_cap == 112e9


def test_h2d_only_links_bind():
    topo = Topology()
    rates = allocate_rates([_flow(i, HOST, i) for i in range(4)], topo)
    assert all(r == pytest.approx(28e9) for r in rates.values())


def test_d2h_priority_starves_h2d():
    topo = Topology()
    flows = [_flow(i, HOST, i) for i in range(4)] + [_flow(4 + i, i, HOST) for i in range(4)]
    rates = allocate_rates(flows, topo)
    assert [rates[i] for i in range(4, 8)] == pytest.approx([28e9] * 4)
    assert [rates[i] for i in range(4)] == pytest.approx([9.5e9] * 4)


def test_host_cap_binds_before_links():
    topo = build_topology({"host_cap": 100e9})
    rates = allocate_rates([_flow(i, HOST, i) for i in range(4)], topo)
    assert sum(rates.values()) == pytest.approx(100e9)


def test_empty_flow_set():
    assert allocate_rates([], Topology()) == {}


def test_forwarded_path_resources():
    assert path_resources(Topology(), HOST, 1) == (("h2d", 1), "host")
    assert resource_capacity(Topology(), ("fab", 1, 0)) == 100e9


@given(st.lists(st.tuples(st.sampled_from(["h2d", "d2h", "fab"]), st.integers(0, 3), st.integers(0, 3)),
                min_size=1, max_size=24),
       st.floats(20e9, 200e9), st.booleans())
def test_allocation_respects_every_capacity(spec, host_cap, prio):
    topo = build_topology({"host_cap": host_cap, "d2h_priority": prio})
    flows = []
    for i, (kind, a, b) in enumerate(spec):
        if kind == "h2d":
            flows.append(Flow(HOST, a, 1.0, i))
        elif kind == "d2h":
            flows.append(Flow(a, HOST, 1.0, i))
        elif a != b:
            flows.append(Flow(a, b, 1.0, i))
    if not flows:
        return
    rates = allocate_rates(flows, topo)
    load = {}
    for f in flows:
        assert rates[f.flow_id] >= 0
        for r in f.resources:
            load[r] = load.get(r, 0.0) + rates[f.flow_id]
    for r, used in load.items():
        assert used <= resource_capacity(topo, r) * (1 + 1e-9)
    # work conservation: every flow crosses at least one saturated resource
    for f in flows:
        assert any(load[r] >= resource_capacity(topo, r) * (1 - 1e-6) for r in f.resources)


@given(st.integers(1, 4), st.integers(0, 4), st.floats(0.1, 1.0))
def test_reducing_h2d_demand_never_hurts_d2h(n_h2d, n_d2h, cap_frac):
    topo = Topology()
    base = [Flow(HOST, i % 4, 1.0, i) for i in range(n_h2d)] + [Flow(i % 4, HOST, 1.0, 10 + i) for i in range(n_d2h)]
    r1 = allocate_rates(base, topo)
    capped = [Flow(f.src, f.dst, 1.0, f.flow_id, max_rate=(cap_frac * 28e9 if f.is_h2d else float("inf")))
              for f in base]
    r2 = allocate_rates(capped, topo)
    for f in base:
        if not f.is_h2d:
            assert r2[f.flow_id] >= r1[f.flow_id] * (1 - 1e-12)


def test_one_second_flow():
    e = Engine()
    e.submit_copy(HOST, 0, int(28e9), latency=0.0)
    assert e.run_until_idle() == pytest.approx(1.0)


def test_two_flows_share_one_direction():
    e = Engine()
    h1 = e.submit_copy(HOST, 0, int(28e9), latency=0.0)
    h2 = e.submit_copy(HOST, 0, int(28e9), latency=0.0)
    e.run_until_idle()
    assert h1.finished == pytest.approx(2.0) and h2.finished == pytest.approx(2.0)


def test_packet_copy_time_includes_latency():
    e = Engine()
    h = e.submit_copy(HOST, 0, 20_000_000)
    e.run_until_idle()
    assert h.finished == pytest.approx(20e6 / 28e9 + e.topology.copy_latency)


def test_forwarded_copy_charges_each_hop():
    e = Engine(build_topology({"copy_latency": 0.0}))
    h = e.submit_copy(HOST, 0, int(28e9), via=1)
    e.run_until_idle()
    assert h.finished == pytest.approx(1.0 + 28e9 / 100e9)


def test_zero_byte_copy_rejected():
    with pytest.raises(FabricError):
        Engine().submit_copy(HOST, 0, 0)


def test_unknown_endpoint_rejected():
    with pytest.raises(FabricError):
        Engine().submit_copy(HOST, 7, 10)


def test_empty_engine_clock_unchanged():
    e = Engine()
    assert e.run_until_idle() == 0.0


def test_real_copy_conserves_bytes():
    e = Engine(payload_mode="real")
    data = np.arange(1000, dtype=np.uint64)
    src = e.put_host(data)
    dst = e.alloc(2, src.len)
    back = e.alloc(HOST, src.len)
    e.submit_copy(src, dst, via=None)
    e.run_until_idle()
    e.submit_copy(dst, back, via=1)
    e.run_until_idle()
    assert np.array_equal(e.view(back).view(np.uint64), data)


def test_overlapping_real_regions_rejected():
    e = Engine(payload_mode="real")
    r = e.alloc(HOST, 64)
    with pytest.raises(FabricError):
        e.submit_copy(MemRef(HOST, 0, 32), MemRef(HOST, 16, 32))
    e.free(r)


def test_device_memory_bound():
    e = Engine(build_topology({"device_mem": 1024}))
    e.alloc(0, 1000)
    with pytest.raises(FabricError, match="out of memory"):
        e.alloc(0, 100)


def _traced_run():
    e = Engine(trace=True)
    for i in range(4):
        e.submit_copy(HOST, i, 10_000_000 * (i + 1))
        e.submit_copy(i, HOST, 7_000_000 * (i + 1))
    e.run_until_idle()
    return e


def test_trace_deterministic_and_exportable(tmp_path):
    a, b = _traced_run(), _traced_run()
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    a.export_trace(pa)
    b.export_trace(pb)
    assert pa.read_bytes() == pb.read_bytes()
    first = json.loads(pa.read_text().splitlines()[0])
    assert set(first) == {"t", "event", "flow_id", "rate"}


def test_clock_monotone_and_capacity_counter():
    e = _traced_run()
    ts = [r["t"] for r in e.trace]
    assert ts == sorted(ts)
    assert e.capacity_violations == 0 and e.max_utilization <= 1 + 1e-9
