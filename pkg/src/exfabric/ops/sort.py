"""Out-of-core sort: per-chunk device sort, exact pivot regrouping, tree merge.

Phase one sorts each chunk on the device, leaving sorted runs in host memory.
Pivots then cut every run so that regrouped partitions hold exactly one chunk
of elements each and are range-ordered; phase two loads each partition's
segments and merges them pairwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import kernels
from ..exchange import DEFAULT_PACKET, RefGroup
from ..executor import ChunkMap, CostModel, ExecReport, ExecutorError, ExKernelSpec, run_exkernel
from ..fabric import Engine, MemRef

ELEM = 8
U64 = np.uint64
_U64_MAX = (1 << 64) - 1


@dataclass
class PivotSet:
    """Cut offsets per run for every partition boundary.

    ``cuts[k][r]`` is where partition ``k`` starts inside run ``r``;
    ``cuts[-1]`` holds the run lengths.  ``pivots`` are boundary values (absent
    for phantom runs, which carry no data).
    """

    cuts: list[list[int]]
    pivots: list[int] | None = None

    @property
    def parts(self) -> int:
        return len(self.cuts) - 1

    def segments(self, k: int) -> list[tuple[int, int, int]]:
        """Non-empty ``(run, start, stop)`` slices making up partition ``k``."""
        lo, hi = self.cuts[k], self.cuts[k + 1]
        return [(r, a, b) for r, (a, b) in enumerate(zip(lo, hi)) if b > a]

    def part_size(self, k: int) -> int:
        return sum(b - a for a, b in zip(self.cuts[k], self.cuts[k + 1]))


def _rank_cut(runs: Sequence[np.ndarray], rank: int) -> tuple[list[int], int | None]:
    """Cut vector splitting the first ``rank`` elements under (value, run, offset)."""
    total = sum(r.size for r in runs)
    if rank <= 0:
        return [0] * len(runs), None
    if rank >= total:
        return [r.size for r in runs], None

    def count_le(v: int) -> int:
        x = U64(v)
        return sum(int(np.searchsorted(r, x, side="right")) for r in runs)

    # smallest value whose inclusive count exceeds rank: the element at that rank
    lo, hi = 0, _U64_MAX
    while lo < hi:
        mid = (lo + hi) // 2
        if count_le(mid) > rank:
            hi = mid
        else:
            lo = mid + 1
    pivot = U64(lo)
    left = [int(np.searchsorted(r, pivot, side="left")) for r in runs]
    right = [int(np.searchsorted(r, pivot, side="right")) for r in runs]
    need = rank - sum(left)
    cut = []
    for a, b in zip(left, right):
        take = min(b - a, need)
        need -= take
        cut.append(a + take)
    return cut, lo


def find_pivots(runs: Sequence[np.ndarray], n_parts: int | None = None, part_size: int | None = None) -> PivotSet:
    """Exact regrouping of sorted runs into range-ordered partitions.

    Partition size defaults to the longest run; every partition except the
    last holds exactly that many elements.  Equal values are split in run
    order, so duplicates never break the size guarantee.
    """
    runs = [np.asarray(r, dtype=U64) for r in runs]
    total = sum(r.size for r in runs)
    if part_size is None:
        if n_parts is not None:
            part_size = max(1, math.ceil(total / n_parts))
        else:
            part_size = max((r.size for r in runs), default=1) or 1
    if n_parts is None:
        n_parts = max(1, math.ceil(total / part_size))
    cuts, pivots = [], []
    for k in range(n_parts + 1):
        cut, p = _rank_cut(runs, min(k * part_size, total))
        cuts.append(cut)
        pivots.append(p)
    if total:
        pivots[0] = int(min(int(r[0]) for r in runs if r.size))
        pivots[-1] = int(max(int(r[-1]) for r in runs if r.size))
    return PivotSet(cuts, pivots)


def phantom_pivots(run_lens: Sequence[int], part_size: int) -> PivotSet:
    """Cuts for data-free runs assuming uniformly spread values.

    Each partition draws from every run in proportion to what the run has
    left, rounded so the partition size stays exact.
    """
    remaining = list(run_lens)
    left_total = sum(remaining)
    n_parts = max(1, math.ceil(left_total / part_size))
    cut = [0] * len(remaining)
    cuts = [list(cut)]
    for _ in range(n_parts):
        want = min(part_size, left_total)
        take = [rem * want // left_total if left_total else 0 for rem in remaining]
        short = want - sum(take)
        for r in sorted(range(len(remaining)), key=lambda r: -(remaining[r] - take[r])):
            if short == 0:
                break
            if remaining[r] > take[r]:
                take[r] += 1
                short -= 1
        for r, t in enumerate(take):
            cut[r] += t
            remaining[r] -= t
        left_total -= want
        cuts.append(list(cut))
    return PivotSet(cuts, None)


def _half_u64(mem: np.ndarray, half: int, half_bytes: int, n: int) -> np.ndarray:
    start = half * half_bytes
    return mem[start : start + n * ELEM].view(U64)


def sort_spec(inputs: list[RefGroup], outputs: list[RefGroup], chunk_elems: int) -> ExKernelSpec:
    """Per-chunk device sort over a two-half buffer.

    The layout code names the half holding the latest result; a chunk is
    loaded into the other half and sorted in place there, which flips the code.
    """
    half = chunk_elems * ELEM
    lens = [g.total_len // ELEM for g in inputs]

    def kernel(mem, code, it, tmp):
        src = 1 - code
        if mem is not None:
            arr = _half_u64(mem, src, half, lens[it])
            arr[:] = np.sort(arr, kind="stable")
        return src

    return ExKernelSpec(
        inputs=ChunkMap(inputs, half),
        outputs=ChunkMap(outputs, half),
        chunk_sz=2 * half,
        kernel=kernel,
        in_buffer=lambda code, it: [((1 - code) * half, lens[it] * ELEM)],
        out_buffer=lambda code, it: [(code * half, lens[it] * ELEM)],
        declared_out_len=half,
        cost_kind="sort",
        elements=lambda it: lens[it],
        name="sort",
    )


def merge_spec(runs: list[MemRef], pivots: PivotSet, output: MemRef | None, chunk_elems: int,
               engine: Engine) -> ExKernelSpec:
    """Load each partition's run segments and merge them pairwise in a tree."""
    half = chunk_elems * ELEM
    seg_lens = [[b - a for _, a, b in pivots.segments(k)] for k in range(pivots.parts)]
    sizes = [sum(s) for s in seg_lens]
    inputs, outputs = [], []
    out_off = 0
    for k in range(pivots.parts):
        inputs.append(RefGroup(runs[r].sub(a * ELEM, (b - a) * ELEM) for r, a, b in pivots.segments(k)))
        if output is not None and sizes[k]:
            outputs.append(RefGroup([output.sub(out_off * ELEM, sizes[k] * ELEM)]))
        else:
            outputs.append(RefGroup())
        out_off += sizes[k]

    def kernel(mem, code, it, tmp):
        src = 1 - code
        lens = seg_lens[it]
        if mem is None:
            levels = math.ceil(math.log2(len(lens))) if len(lens) > 1 else 0
            return src if levels % 2 == 0 else 1 - src
        cur, bounds = src, np.concatenate(([0], np.cumsum(lens, dtype=np.int64)))
        while len(bounds) > 2:
            data = _half_u64(mem, cur, half, int(bounds[-1]))
            dst = _half_u64(mem, 1 - cur, half, int(bounds[-1]))
            nb = [0]
            for i in range(0, len(bounds) - 1, 2):
                a0, a1 = bounds[i], bounds[i + 1]
                if i + 2 < len(bounds):
                    b1 = bounds[i + 2]
                    dst[a0:b1] = kernels.merge_sorted(data[a0:a1], data[a1:b1])
                else:
                    b1 = a1
                    dst[a0:a1] = data[a0:a1]
                nb.append(b1)
            bounds = np.asarray(nb, dtype=np.int64)
            cur = 1 - cur
        return cur

    return ExKernelSpec(
        inputs=ChunkMap(inputs, half),
        outputs=ChunkMap(outputs, half),
        chunk_sz=2 * half,
        kernel=kernel,
        in_buffer=lambda code, it: [((1 - code) * half, sizes[it] * ELEM)],
        out_buffer=lambda code, it: [(code * half, sizes[it] * ELEM)],
        declared_out_len=half,
        cost_kind="merge",
        elements=lambda it: sizes[it],
        name="merge",
    )


@dataclass
class SortResult:
    output: np.ndarray | None
    elements: int
    reports: list[ExecReport]
    pivots: PivotSet = field(repr=False)

    @property
    def total_s(self) -> float:
        return sum(r.total for r in self.reports)

    @property
    def throughput(self) -> float:
        return self.elements / self.total_s if self.total_s > 0 else math.inf

    def share(self, phase: str) -> float:
        tot = self.total_s
        return sum(r.total for r in self.reports if r.phase == phase) / tot if tot else 0.0


def sort_out_of_core(data: np.ndarray | int, chunk_elems: int, engine: Engine | None = None,
                     cost: CostModel | None = None, *, target: int = 0, links: int | None = None,
                     packet: int = DEFAULT_PACKET) -> SortResult:
    """Sort u64 data larger than device memory.

    ``data`` is an array in real mode or an element count in phantom mode.
    """
    engine = engine or Engine(payload_mode="real" if not isinstance(data, (int, np.integer)) else "phantom")
    chunk_elems = int(chunk_elems)
    if chunk_elems < 1:
        raise ExecutorError(f"chunk must hold at least one element, got {chunk_elems}")
    if engine.real:
        if isinstance(data, (int, np.integer)):
            raise ExecutorError("real engines need an array to sort")
        data = np.ascontiguousarray(data, dtype=U64)
        n = int(data.size)
    else:
        n = int(data if isinstance(data, (int, np.integer)) else np.asarray(data).size)
    if n < 1:
        raise ExecutorError("nothing to sort")
    nbytes = n * ELEM
    src = engine.put_host(data if engine.real else nbytes)
    runs_ref = engine.alloc("host", nbytes)
    out_ref = engine.alloc("host", nbytes)

    cb = chunk_elems * ELEM
    offs = list(range(0, nbytes, cb))
    ins = [RefGroup([src.sub(o, min(cb, nbytes - o))]) for o in offs]
    run_refs = [runs_ref.sub(o, min(cb, nbytes - o)) for o in offs]
    kw = dict(target=target, links=links, packet=packet)
    sort_rep = run_exkernel(engine, sort_spec(ins, [RefGroup([r]) for r in run_refs], chunk_elems), cost, **kw)

    if engine.real:
        runs = [engine.view(r).view(U64) for r in run_refs]
        pivots = find_pivots(runs, part_size=chunk_elems)
    else:
        pivots = phantom_pivots([r.len // ELEM for r in run_refs], chunk_elems)
    merge_rep = run_exkernel(engine, merge_spec(run_refs, pivots, out_ref, chunk_elems, engine), cost, **kw)

    output = engine.view(out_ref).view(U64).copy() if engine.real else None
    return SortResult(output, n, [sort_rep, merge_rep], pivots)
