"""Scenario runners behind the CLI.

Every runner returns a plain report dict whose content depends only on its
arguments, so reruns with the same configuration and seed are byte-identical.
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Iterable, Sequence

import numpy as np

from ..exchange import DEFAULT_PACKET, check_pop_log, exchange, naive_exchange, phantom_groups, RefGroup
from ..executor import CostModel
from ..fabric import HOST, Engine, Topology, build_topology
from ..ops.join import hash_join_sum
from ..ops.latemat import EXCHANGE, ZERO_COPY, LateMatPolicy, selective_scan
from ..ops.sort import sort_out_of_core
from ..ops.star import Dimension, star_query
from ..ops.tables import fk_tables, uniform_u64
from .report import SCHEMA

GB = 1_000_000_000
MB = 1_000_000

PAPER_SORT = {"elements": 8_000_000_000, "chunk": 500_000_000}
DESK_SORT = {"elements": 1_000_000, "chunk": 1 << 17}
PAPER_JOIN = {"rows_a": 4_000_000_000, "rows_b": 4_000_000_000, "chunk_rows": 500_000_000, "radix_bits": 24}
DESK_JOIN = {"rows_a": 100_000, "rows_b": 100_000, "chunk_rows": 30_000, "radix_bits": 8}


def _pick(value, default) -> int:
    return int(default if value is None else value)


def _report(command: str, config: dict, rows: list[dict], summary: dict, checks: dict) -> dict:
    return {"schema": SCHEMA, "command": command, "ok": all(checks.values()), "config": config,
            "rows": rows, "summary": summary, "checks": checks}


def capacity_ok(engine: Engine) -> bool:
    """No allocation epoch pushed any link direction or the host past capacity."""
    return engine.capacity_violations == 0 and engine.max_utilization <= 1 + 1e-9


def _topo(topology: Topology | dict | None) -> Topology:
    if isinstance(topology, Topology):
        return topology
    return build_topology(topology or {})


def _real_exchange_groups(engine: Engine, nbytes: int, seed: int, target: int):
    rng = np.random.default_rng(seed)
    src_h2d = engine.put_host(rng.integers(0, 256, nbytes, dtype=np.uint8))
    dst_h2d = engine.alloc(target, nbytes)
    src_d2h = engine.alloc(target, nbytes)
    engine.view(src_d2h)[:] = rng.integers(0, 256, nbytes, dtype=np.uint8)
    expect = engine.view(src_d2h).copy()
    dst_d2h = engine.alloc(HOST, nbytes)
    groups = (RefGroup([dst_h2d]), RefGroup([src_h2d]), RefGroup([dst_d2h]), RefGroup([src_d2h]))

    def verify() -> bool:
        return bool(np.array_equal(engine.view(dst_h2d), engine.view(src_h2d))
                    and np.array_equal(engine.view(dst_d2h), expect))

    return groups, verify


def run_exchange_bench(sizes: Sequence[int] = (2 * GB, 4 * GB, 8 * GB, 16 * GB),
                       packets: Sequence[int] = (10 * MB, 20 * MB, 40 * MB, 80 * MB),
                       links: Sequence[int] = (4,), schedulers: Sequence[str] = ("exchange", "naive"),
                       topology: Topology | dict | None = None, payload: str = "phantom", seed: int = 0,
                       target: int = 0) -> dict:
    """Bidirectional sweep: ``size`` bytes each way for every packet size, link count and scheduler."""
    topo = _topo(topology)
    rows, checks = [], {"capacity_ok": True, "flow_ok": True, "staging_ok": True, "payload_ok": True}
    for size in sizes:
        for packet in packets:
            for n_links in links:
                for sched in schedulers:
                    engine = Engine(topo, payload_mode=payload)
                    verify = None
                    if engine.real:
                        groups, verify = _real_exchange_groups(engine, int(size), seed, target)
                    else:
                        groups = phantom_groups(engine, int(size), int(size), target)
                    if sched == "exchange":
                        rep = exchange(engine, *groups, target=target, packet=int(packet), links=int(n_links))
                        flow_ok = rep.flow_ok and check_pop_log(rep.pop_log, *_totals(rep.pop_log))
                    elif sched == "naive":
                        rep = naive_exchange(engine, *groups, target=target, packet=int(packet), links=int(n_links))
                        flow_ok = True
                    else:
                        raise ValueError(f"unknown scheduler {sched!r}")
                    cap = capacity_ok(engine)
                    checks["capacity_ok"] &= cap
                    checks["flow_ok"] &= flow_ok
                    checks["staging_ok"] &= rep.max_staging <= 2
                    if verify is not None:
                        checks["payload_ok"] &= verify()
                    rows.append({"size": int(size), "packet": int(packet), "links": int(n_links), "scheduler": sched,
                                 "throughput": rep.throughput, "elapsed_s": rep.elapsed,
                                 "max_staging": rep.max_staging, "flow_ok": flow_ok, "capacity_ok": cap})
    best = max((r for r in rows if r["scheduler"] == "exchange"), key=lambda r: r["throughput"], default=None)
    summary = {"peak_exchange_throughput": best["throughput"] if best else None,
               "host_cap": topo.host_cap}
    config = {"sizes": [int(s) for s in sizes], "packets": [int(p) for p in packets], "links": [int(n) for n in links],
              "schedulers": list(schedulers), "payload": payload, "seed": seed, "topology": topo.to_dict()}
    return _report("exchange-bench", config, rows, summary, checks)


def _totals(pop_log) -> tuple[int, int]:
    h = sum(1 for p in pop_log if p[1] == "H2D")
    return h, len(pop_log) - h


def _pipeline_checks(checks: dict, cap: bool, reports) -> None:
    checks["capacity_ok"] &= cap
    checks["flow_ok"] &= all(r.flow_ok for r in reports)
    checks["staging_ok"] &= all(r.max_staging <= 2 for r in reports)


def _speedup(rows: list[dict]) -> float | None:
    by = {r["links"]: r["total_s"] for r in rows}
    if 1 in by and len(by) > 1:
        return by[1] / by[max(by)]
    return None


def run_sort_bench(elements: int | None = None, chunk: int | None = None, links: Iterable[int] = (4, 1),
                   payload: str = "phantom", seed: int = 0, topology: Topology | dict | None = None,
                   cost: CostModel | None = None, packet: int = DEFAULT_PACKET) -> dict:
    defaults = PAPER_SORT if payload == "phantom" else DESK_SORT
    elements = _pick(elements, defaults["elements"])
    chunk = _pick(chunk, defaults["chunk"])
    topo = _topo(topology)
    cost = cost or CostModel()
    data = uniform_u64(elements, seed) if payload == "real" else None
    rows, checks = [], {"capacity_ok": True, "flow_ok": True, "staging_ok": True, "sorted_ok": True}
    for n_links in links:
        engine = Engine(topo, payload_mode=payload)
        res = sort_out_of_core(data if data is not None else elements, chunk, engine, cost,
                               links=int(n_links), packet=packet)
        cap = capacity_ok(engine)
        _pipeline_checks(checks, cap, res.reports)
        if data is not None:
            checks["sorted_ok"] &= bool(np.array_equal(res.output, np.sort(data)))
        rows.append({"links": int(n_links), "elements": elements, "chunk": chunk, "total_s": res.total_s,
                     "throughput": res.throughput, "sort_share": res.share("sort"),
                     "merge_share": res.share("merge"), "capacity_ok": cap,
                     "phases": [r.to_dict() for r in res.reports]})
    head = rows[0] if rows else {}
    summary = {"throughput": head.get("throughput"), "sort_share": head.get("sort_share"),
               "speedup_vs_single_link": _speedup(rows)}
    config = {"elements": elements, "chunk": chunk, "links": [int(n) for n in links], "payload": payload,
              "seed": seed, "packet": packet, "cost": asdict(cost), "topology": topo.to_dict()}
    return _report("sort", config, rows, summary, checks)


def _join_oracle(a, b) -> int:
    lookup = dict(zip(a.key.tolist(), a.val.tolist()))
    return sum(lookup[k] + v for k, v in zip(b.key.tolist(), b.val.tolist()) if k in lookup) % (1 << 64)


def run_join_bench(rows_a: int | None = None, rows_b: int | None = None, chunk_rows: int | None = None,
                   radix_bits: int | None = None, links: Iterable[int] = (4, 1), payload: str = "phantom",
                   seed: int = 0, topology: Topology | dict | None = None, cost: CostModel | None = None,
                   packet: int = DEFAULT_PACKET, buffer_rows: int | None = None) -> dict:
    d = PAPER_JOIN if payload == "phantom" else DESK_JOIN
    rows_a = _pick(rows_a, d["rows_a"])
    rows_b = _pick(rows_b, d["rows_b"])
    chunk_rows = _pick(chunk_rows, d["chunk_rows"])
    radix_bits = _pick(radix_bits, d["radix_bits"])
    topo = _topo(topology)
    cost = cost or CostModel()
    tables = fk_tables(rows_a, rows_b, seed) if payload == "real" else None
    expect = _join_oracle(*tables) if tables else None
    rows, checks = [], {"capacity_ok": True, "flow_ok": True, "staging_ok": True, "result_ok": True}
    result = None
    for n_links in links:
        engine = Engine(topo, payload_mode=payload)
        a, b = tables if tables else (rows_a, rows_b)
        res = hash_join_sum(a, b, radix_bits, chunk_rows, engine, cost, buffer_rows=buffer_rows,
                            links=int(n_links), packet=packet)
        cap = capacity_ok(engine)
        _pipeline_checks(checks, cap, res.reports)
        if expect is not None:
            checks["result_ok"] &= res.total == expect
            result = res.total
        shares = res.shares()
        rows.append({"links": int(n_links), "tuples": res.tuples, "chunk_rows": chunk_rows, "radix_bits": radix_bits,
                     "total_s": res.total_s, "throughput": res.throughput,
                     "partition_a_share": shares.get("partition_a", 0.0),
                     "partition_b_share": shares.get("partition_b", 0.0),
                     "join_share": shares.get("join", 0.0), "capacity_ok": cap,
                     "join_partitions": res.partitions.parts,
                     "phases": [r.to_dict() for r in res.reports]})
    head = rows[0] if rows else {}
    shares = [head.get(k, 0.0) for k in ("partition_a_share", "partition_b_share", "join_share")]
    summary = {"throughput": head.get("throughput"), "speedup_vs_single_link": _speedup(rows),
               "max_share_gap": (max(shares) - min(shares)) if rows else None, "sum": result}
    config = {"rows_a": rows_a, "rows_b": rows_b, "chunk_rows": chunk_rows, "radix_bits": radix_bits,
              "links": [int(n) for n in links], "payload": payload, "seed": seed, "packet": packet,
              "buffer_rows": buffer_rows, "cost": asdict(cost), "topology": topo.to_dict()}
    return _report("join", config, rows, summary, checks)


def run_scan_bench(n: int = 1 << 22, sels: Sequence[int] = (1, 2, 4, 8, 16, 32, 64, 128), element_size: int = 4,
                   payload: str = "phantom", seed: int = 0, topology: Topology | dict | None = None,
                   cache_line: int = 64, n_exchange: int = 4) -> dict:
    """Both transfer modes at every stride; reports the first stride where zero-copy is no slower."""
    topo = _topo(topology)
    policy = LateMatPolicy(element_size, cache_line, n_exchange)
    if payload == "real":
        dtype = {4: np.uint32, 8: np.uint64}.get(element_size)
        if dtype is None:
            raise ValueError("real scans support 4- or 8-byte elements")
        column = np.random.default_rng(seed).integers(0, 1 << 16, n).astype(dtype)
    else:
        column = int(n)
    rows, checks = [], {"aggregate_ok": True}
    crossover = None
    for sel in sels:
        res = {}
        for mode in (EXCHANGE, ZERO_COPY):
            r = selective_scan(column, int(sel), mode, Engine(topo), policy)
            res[mode] = r
            rows.append({"sel": int(sel), "mode": mode, "seconds": r.seconds, "bytes": r.bytes_moved,
                         "aggregate": r.aggregate})
        checks["aggregate_ok"] &= res[EXCHANGE].aggregate == res[ZERO_COPY].aggregate
        if crossover is None and res[ZERO_COPY].seconds <= res[EXCHANGE].seconds:
            crossover = int(sel)
    summary = {"threshold": str(policy.threshold), "crossover_sel": crossover}
    config = {"n": int(n), "sels": [int(s) for s in sels], "element_size": element_size, "payload": payload,
              "seed": seed, "cache_line": cache_line, "n_exchange": n_exchange, "topology": topo.to_dict()}
    return _report("scan-bench", config, rows, summary, checks)


def synthetic_star(fact_rows: int, selectivities: Sequence[float], seed: int = 0, dim_rows: int = 1024,
                   groups: int = 8):
    """Seeded fact table with one foreign key per dimension and a u32 measure."""
    rng = np.random.default_rng(seed)
    fact, dims = {}, []
    for i, s in enumerate(selectivities):
        keys = np.arange(dim_rows, dtype=np.int64)
        attr = rng.integers(0, groups, dim_rows)
        keep = np.zeros(dim_rows, dtype=bool)
        keep[rng.permutation(dim_rows)[: int(round(s * dim_rows))]] = True
        col = f"fk{i}"
        fact[col] = rng.integers(0, dim_rows, fact_rows).astype(np.uint32)
        dims.append(Dimension(f"d{i}", keys, attr, col, pred=lambda a, keep=keep: keep))
    fact["measure"] = rng.integers(0, 1000, fact_rows).astype(np.uint32)
    return fact, dims


def star_oracle(fact, dims, measure: str, group_by: str | None) -> dict[int, int]:
    """Row-at-a-time evaluation used to check :func:`star_query`."""
    tables = []
    for d in dims:
        keep = np.asarray(d.pred(np.asarray(d.attr)), dtype=bool)
        tables.append({int(k): int(a) for k, a, ok in zip(d.keys, d.attr, keep) if ok})
    out: dict[int, int] = {}
    n = len(fact[measure])
    cols = {d.fact_column: np.asarray(fact[d.fact_column]).tolist() for d in dims}
    vals = np.asarray(fact[measure]).tolist()
    for i in range(n):
        g, ok = 0, True
        for d, t in zip(dims, tables):
            a = t.get(cols[d.fact_column][i])
            if a is None:
                ok = False
                break
            if d.name == group_by:
                g = a
        if ok:
            out[g] = (out.get(g, 0) + vals[i]) % (1 << 64)
    return dict(sorted(out.items()))


def run_star_bench(fact_rows: int = 200_000, selectivities: Sequence[float] = (0.5, 1 / 256), seed: int = 0,
                   topology: Topology | dict | None = None, chunk_rows: int = 1 << 16, check: bool = True) -> dict:
    topo = _topo(topology)
    fact, dims = synthetic_star(fact_rows, selectivities, seed)
    res = star_query(fact, dims, "measure", group_by=dims[0].name, engine=Engine(topo), chunk_rows=chunk_rows)
    checks = {"result_ok": True}
    if check:
        checks["result_ok"] = res.groups == star_oracle(fact, dims, "measure", dims[0].name)
    rows = [{"group": int(g), "sum": int(s)} for g, s in res.groups.items()]
    summary = {"modes": res.modes, "estimators": {k: float(v) for k, v in res.estimators.items()},
               "seconds": res.seconds, "bytes_moved": res.bytes_moved}
    config = {"fact_rows": fact_rows, "selectivities": [float(s) for s in selectivities], "seed": seed,
              "chunk_rows": chunk_rows, "topology": topo.to_dict()}
    return _report("star", config, rows, summary, checks)
