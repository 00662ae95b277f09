"""Radix-partitioned hash join computing SUM(A.val + B.val) over A.key == B.key.

Both tables are first clustered chunk by chunk on the device by the low
``radix_bits`` of the key, each chunk carrying a boundary array that marks
where every hash group starts.  A binary search over the summed group sizes
then cuts the hash range into partitions that fit one device buffer, and
each partition is joined group by group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import kernels
from ..exchange import DEFAULT_PACKET, RefGroup
from ..executor import ChunkMap, CostModel, ExecReport, ExecutorError, ExKernelSpec, run_exkernel
from ..fabric import HOST, Engine, MemRef
from .tables import ColumnTable

TUPLE = 16
BOUND = 8
U64 = np.uint64


class JoinError(ExecutorError):
    pass


def find_boundary(hashes, n_groups: int) -> np.ndarray:
    """Start offset of every hash group in a clustered chunk, plus the chunk length.

    Empty groups take the start of the next non-empty one, so group ``g`` is
    always ``[bounds[g], bounds[g + 1])``.
    """
    hashes = np.asarray(hashes, dtype=U64)
    if n_groups < 1:
        raise JoinError("need at least one group")
    if hashes.size:
        if np.any(hashes[1:] < hashes[:-1]):
            raise JoinError("hashes must be non-decreasing")
        if int(hashes[-1]) >= n_groups:
            raise JoinError(f"hash {int(hashes[-1])} outside {n_groups} groups")
    return kernels.find_boundary_raw(hashes, int(n_groups))


class UniformBounds:
    """Boundary array of a data-free chunk whose keys spread evenly over the groups."""

    __slots__ = ("rows", "groups")

    def __init__(self, rows: int, groups: int):
        self.rows, self.groups = int(rows), int(groups)

    def __getitem__(self, g: int) -> int:
        return (int(g) * self.rows) // self.groups

    def __len__(self) -> int:
        return self.groups + 1


@dataclass
class JoinPartitionSpec:
    """Hash cut points and, per partition, the segments of each clustered chunk.

    ``segments_a[k]`` / ``segments_b[k]`` list ``(chunk, start_row, stop_row)``
    for partition ``k``; together they cover ``[cuts[k], cuts[k+1])``.
    """

    cuts: list[int]
    segments_a: list[list[tuple[int, int, int]]]
    segments_b: list[list[tuple[int, int, int]]]

    @property
    def parts(self) -> int:
        return len(self.cuts) - 1

    def rows(self, k: int) -> tuple[int, int]:
        return (sum(b - a for _, a, b in self.segments_a[k]), sum(b - a for _, a, b in self.segments_b[k]))


def map_join_partitions(bounds_a: Sequence, bounds_b: Sequence, buffer_sz: int) -> JoinPartitionSpec:
    """Cut the hash range so each partition's tuples from both tables fit ``buffer_sz`` bytes.

    Cuts are found greedily left to right; each one is a binary search for the
    furthest group whose cumulative size still fits.
    """
    everything = list(bounds_a) + list(bounds_b)
    if not everything:
        raise JoinError("no boundary arrays")
    n_groups = len(everything[0]) - 1
    if any(len(b) - 1 != n_groups for b in everything):
        raise JoinError("boundary arrays disagree on the number of groups (different radix_bits?)")
    cap = int(buffer_sz) // TUPLE
    if cap < 1:
        raise JoinError(f"buffer of {buffer_sz} bytes cannot hold one tuple")

    def cum(g: int) -> int:
        return sum(int(b[g]) for b in everything)

    cuts = [0]
    lo_val = cum(0)
    while cuts[-1] < n_groups:
        i = cuts[-1]
        if cum(i + 1) - lo_val > cap:
            raise JoinError(f"hash group {i} holds {cum(i + 1) - lo_val} tuples, buffer fits {cap}")
        lo, hi = i + 1, n_groups
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if cum(mid) - lo_val <= cap:
                lo = mid
            else:
                hi = mid - 1
        cuts.append(lo)
        lo_val = cum(lo)

    def segs(bounds):
        out = []
        for k in range(len(cuts) - 1):
            row = []
            for c, b in enumerate(bounds):
                s, e = int(b[cuts[k]]), int(b[cuts[k + 1]])
                if e > s:
                    row.append((c, s, e))
            out.append(row)
        return out

    return JoinPartitionSpec(cuts, segs(bounds_a), segs(bounds_b))


@dataclass
class PartitionedTable:
    """Clustered chunks and their boundary arrays, all host-resident."""

    clustered: list[MemRef]
    bounds: list
    bounds_refs: list[MemRef]
    chunk_rows: list[int]
    radix_bits: int
    report: ExecReport

    @property
    def groups(self) -> int:
        return 1 << self.radix_bits


def _table_rows(t) -> int:
    return t.rows if isinstance(t, ColumnTable) else int(t)


def radix_partition(table: ColumnTable | int, radix_bits: int, chunk_rows: int, engine: Engine,
                    cost: CostModel | None = None, *, name: str = "partition", **kw) -> PartitionedTable:
    """Cluster every chunk of ``table`` by hash = key mod 2**radix_bits on the device.

    ``table`` is a row count in phantom mode.
    """
    if radix_bits < 1:
        raise JoinError("radix_bits must be >= 1")
    if chunk_rows < 1:
        raise JoinError(f"chunk must hold at least one tuple, got {chunk_rows}")
    rows = _table_rows(table)
    if rows < 1:
        raise JoinError("table is empty")
    groups = 1 << radix_bits
    mask = U64(groups - 1)
    if engine.real:
        if not isinstance(table, ColumnTable):
            raise JoinError("real engines need a ColumnTable")
        src = engine.put_host(np.column_stack([table.key, table.val]).reshape(-1))
    else:
        src = engine.put_host(rows * TUPLE)
    half = chunk_rows * TUPLE
    bsz = (groups + 1) * BOUND
    n_chunks = math.ceil(rows / chunk_rows)
    lens = [min(chunk_rows, rows - i * chunk_rows) for i in range(n_chunks)]
    clustered_all = engine.alloc(HOST, rows * TUPLE)
    bounds_all = engine.alloc(HOST, n_chunks * bsz)
    inputs, outputs, clustered, brefs = [], [], [], []
    for i, n in enumerate(lens):
        inputs.append(RefGroup([src.sub(i * half, n * TUPLE)]))
        c = clustered_all.sub(i * half, n * TUPLE)
        b = bounds_all.sub(i * bsz, bsz)
        clustered.append(c)
        brefs.append(b)
        outputs.append(RefGroup([c, b]))

    def kernel(mem, code, it, tmp):
        if mem is not None:
            n = lens[it]
            rows_in = mem[(1 - code) * half : (1 - code) * half + n * TUPLE].view(U64).reshape(-1, 2)
            keys, vals = kernels.radix_cluster(rows_in[:, 0].copy(), rows_in[:, 1].copy(), radix_bits)
            rows_out = mem[code * half : code * half + n * TUPLE].view(U64).reshape(-1, 2)
            rows_out[:, 0] = keys
            rows_out[:, 1] = vals
            bounds = find_boundary(keys & mask, groups)
            mem[2 * half : 2 * half + bsz].view(np.int64)[:] = bounds
        return code

    spec = ExKernelSpec(
        inputs=ChunkMap(inputs, half),
        outputs=ChunkMap(outputs, half + bsz),
        chunk_sz=2 * half + bsz,
        kernel=kernel,
        in_buffer=lambda code, it: [((1 - code) * half, lens[it] * TUPLE)],
        out_buffer=lambda code, it: [(code * half, lens[it] * TUPLE), (2 * half, bsz)],
        declared_out_len=half + bsz,
        cost_kind="partition",
        elements=lambda it: lens[it],
        name=name,
    )
    report = run_exkernel(engine, spec, cost, **kw)
    if engine.real:
        bounds = [engine.view(b).view(np.int64).copy() for b in brefs]
    else:
        bounds = [UniformBounds(n, groups) for n in lens]
    return PartitionedTable(clustered, bounds, brefs, lens, radix_bits, report)


def join_spec(pa: PartitionedTable, pb: PartitionedTable, parts: JoinPartitionSpec, buffer_rows: int,
              results: MemRef | None, group_limit: int | None = None) -> ExKernelSpec:
    """Per partition: load A's and B's segments, build on A, probe with B, emit one partial sum."""
    cap = buffer_rows * TUPLE
    inputs, outputs, sizes = [], [], []
    for k in range(parts.parts):
        refs = [pa.clustered[c].sub(s * TUPLE, (e - s) * TUPLE) for c, s, e in parts.segments_a[k]]
        refs += [pb.clustered[c].sub(s * TUPLE, (e - s) * TUPLE) for c, s, e in parts.segments_b[k]]
        inputs.append(RefGroup(refs))
        sizes.append(parts.rows(k))
        outputs.append(RefGroup([results.sub(8 * k, 8)]) if results is not None else RefGroup())
    max_group = [0]

    def kernel(mem, code, it, tmp):
        if mem is not None:
            na, nb = sizes[it]
            rows = mem[: (na + nb) * TUPLE].view(U64).reshape(-1, 2)
            a, b = rows[:na], rows[na:]
            total, card = kernels.join_sum(a[:, 0].copy(), a[:, 1].copy(), b[:, 0].copy(), b[:, 1].copy(),
                                           pa.radix_bits)
            if group_limit is not None and card > group_limit:
                raise JoinError(f"partition {it}: hash group of {card} tuples exceeds limit {group_limit}")
            max_group[0] = max(max_group[0], card)
            mem[cap : cap + 8].view(U64)[0] = U64(total)
        return code

    spec = ExKernelSpec(
        inputs=ChunkMap(inputs, cap),
        outputs=ChunkMap(outputs, 8),
        chunk_sz=cap + 8,
        kernel=kernel,
        in_buffer=lambda code, it: [(0, sum(sizes[it]) * TUPLE)],
        out_buffer=lambda code, it: [(cap, 8)] if results is not None else [],
        declared_out_len=8,
        cost_kind="join",
        elements=lambda it: sum(sizes[it]),
        name="join",
    )
    spec.max_group = max_group  # read back after the run
    return spec


@dataclass
class JoinResult:
    total: int | None
    tuples: int
    reports: list[ExecReport]
    partitions: JoinPartitionSpec = field(repr=False)
    max_group: int = 0

    @property
    def total_s(self) -> float:
        return sum(r.total for r in self.reports)

    @property
    def throughput(self) -> float:
        """Input tuples of both tables per virtual second."""
        return self.tuples / self.total_s if self.total_s > 0 else math.inf

    def shares(self) -> dict[str, float]:
        tot = self.total_s
        return {r.phase: (r.total / tot if tot else 0.0) for r in self.reports}


def hash_join_sum(a: ColumnTable | int, b: ColumnTable | int, radix_bits: int, chunk_rows: int,
                  engine: Engine | None = None, cost: CostModel | None = None, *,
                  buffer_rows: int | None = None, group_limit: int | None = None,
                  target: int = 0, links: int | None = None, packet: int = DEFAULT_PACKET) -> JoinResult:
    """SUM(A.val + B.val) over matching keys, mod 2**64.

    Tables are row counts in phantom mode, where only timing is produced.
    ``buffer_rows`` bounds the tuples of one join partition (default: one chunk).
    """
    if engine is None:
        engine = Engine(payload_mode="real" if isinstance(a, ColumnTable) else "phantom")
    buffer_rows = int(buffer_rows or chunk_rows)
    kw = dict(target=target, links=links, packet=packet)
    pa = radix_partition(a, radix_bits, chunk_rows, engine, cost, name="partition_a", **kw)
    if _table_rows(b) == 0:
        return JoinResult(0 if engine.real else None, sum(pa.chunk_rows), [pa.report],
                          JoinPartitionSpec([0, pa.groups], [[]], [[]]))
    pb = radix_partition(b, radix_bits, chunk_rows, engine, cost, name="partition_b", **kw)
    parts = map_join_partitions(pa.bounds, pb.bounds, buffer_rows * TUPLE)
    results = engine.alloc(HOST, 8 * parts.parts) if engine.real else None
    spec = join_spec(pa, pb, parts, buffer_rows, results, group_limit)
    join_rep = run_exkernel(engine, spec, cost, **kw)
    total = None
    if engine.real:
        with np.errstate(over="ignore"):
            total = int(np.sum(engine.view(results).view(U64), dtype=U64))
    tuples = sum(pa.chunk_rows) + sum(pb.chunk_rows)
    return JoinResult(total, tuples, [pa.report, pb.report, join_rep], parts, spec.max_group[0])
