"""Packetized, flow-controlled host<->device transfers over every link.

A global scheduler splits both directions into packets and feeds two task
queues.  Each participating device runs one worker per direction: the target
device copies directly, other devices forward through two packet-sized
staging slots so that pushing the previous packet overlaps fetching the next.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .fabric import HOST, Engine, FabricError, MemRef

H2D = "H2D"
D2H = "D2H"

DRAIN = "drain"
GAP = "gap"

DEFAULT_PACKET = 20_000_000
DEFAULT_STALL = 10e-6


class ExchangeError(ValueError):
    pass


class RefGroup:
    """Ordered scatter-gather list of regions treated as one logical buffer."""

    def __init__(self, refs: Iterable[MemRef] = ()):
        self.refs: list[MemRef] = list(refs)
        spaces: dict = {}
        for r in self.refs:
            spaces.setdefault(r.space, []).append(r)
        for rs in spaces.values():
            rs = sorted(rs, key=lambda r: r.offset)
            for a, b in zip(rs, rs[1:]):
                if a.end > b.offset:
                    raise ExchangeError(f"overlapping refs in group: {a} and {b}")

    @property
    def total_len(self) -> int:
        return sum(r.len for r in self.refs)

    def __len__(self) -> int:
        return len(self.refs)

    def __iter__(self):
        return iter(self.refs)

    def __repr__(self) -> str:
        return f"RefGroup({self.refs!r})"

    @classmethod
    def of(cls, refs) -> "RefGroup":
        if refs is None:
            return cls()
        if isinstance(refs, RefGroup):
            return refs
        if isinstance(refs, MemRef):
            return cls([refs])
        return cls(refs)


@dataclass(frozen=True)
class TransferTask:
    direction: str
    src: MemRef
    dst: MemRef
    seq: int
    src_index: int = 0
    dst_index: int = 0

    @property
    def len(self) -> int:
        return self.src.len


def packetize(group_src: RefGroup, group_dst: RefGroup, packet: int, direction: str = H2D) -> list[TransferTask]:
    """Tile both groups in order with tasks of at most ``packet`` bytes.

    A task never crosses a region boundary on either side, so every task maps
    to one contiguous source slice and one contiguous destination slice.
    """
    group_src, group_dst = RefGroup.of(group_src), RefGroup.of(group_dst)
    if packet <= 0:
        raise ExchangeError(f"packet size must be > 0, got {packet}")
    if group_src.total_len != group_dst.total_len:
        raise ExchangeError(
            f"source and destination sizes differ: {group_src.total_len} != {group_dst.total_len}"
        )
    tasks: list[TransferTask] = []
    si = di = 0
    so = do = 0
    srcs, dsts = group_src.refs, group_dst.refs
    while si < len(srcs):
        s, d = srcs[si], dsts[di]
        n = min(packet, s.len - so, d.len - do)
        tasks.append(TransferTask(direction, s.sub(so, n), d.sub(do, n), len(tasks), si, di))
        so += n
        do += n
        if so == s.len:
            si, so = si + 1, 0
        if do == d.len:
            di, do = di + 1, 0
    return tasks


@dataclass
class QueueState:
    total_h2d: int = 0
    total_d2h: int = 0
    popped_h2d: int = 0
    popped_d2h: int = 0

    def remaining(self, direction: str) -> int:
        if direction == H2D:
            return self.total_h2d - self.popped_h2d
        return self.total_d2h - self.popped_d2h


def flow_control_allow(q: QueueState, direction: str, policy: str = DRAIN, gap: int = 8) -> bool:
    """Whether one more task may be popped from ``direction``'s queue.

    ``drain``: the device-to-host queue may never drain (as a fraction of its
    total) faster than the host-to-device queue.  ``gap``: neither queue may
    hold more than ``gap`` tasks fewer than the other.
    """
    if q.remaining(direction) <= 0:
        return False
    if policy == DRAIN:
        if direction == H2D:
            return True
        if q.total_h2d == 0:
            return True
        # (popped_d2h + 1) / total_d2h <= popped_h2d / total_h2d, in integers
        return (q.popped_d2h + 1) * q.total_h2d <= q.popped_h2d * q.total_d2h
    if policy == GAP:
        other = D2H if direction == H2D else H2D
        if q.remaining(other) == 0:
            return True
        return q.remaining(direction) - 1 >= q.remaining(other) - gap
    raise ExchangeError(f"unknown flow-control policy {policy!r}")


@dataclass
class ExchangeReport:
    elapsed: float
    bytes_h2d: int
    bytes_d2h: int
    per_link_bytes: dict
    scheduler: str = "exchange"
    links: int = 1
    packet: int = DEFAULT_PACKET
    stalls: int = 0
    max_staging: int = 0
    max_inflight_per_hop: int = 0
    pop_log: list = field(default_factory=list, repr=False)
    flow_ok: bool = True

    @property
    def throughput(self) -> float:
        """Bytes per second counting both directions together."""
        if self.elapsed <= 0:
            return 0.0
        return (self.bytes_h2d + self.bytes_d2h) / self.elapsed

    def to_dict(self) -> dict:
        return {
            "scheduler": self.scheduler,
            "links": self.links,
            "packet": self.packet,
            "elapsed_s": self.elapsed,
            "bytes_h2d": self.bytes_h2d,
            "bytes_d2h": self.bytes_d2h,
            "throughput_Bps_combined": self.throughput,
            "per_link_bytes": {str(k): v for k, v in sorted(self.per_link_bytes.items())},
            "stalls": self.stalls,
            "max_staging": self.max_staging,
            "max_inflight_per_hop": self.max_inflight_per_hop,
            "flow_ok": self.flow_ok,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_pop_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seq", "direction", "t", "link"])
            for row in self.pop_log:
                w.writerow([row[0], row[1], repr(row[2]), row[3]])


def check_pop_log(pop_log: Sequence[tuple], total_h2d: int, total_d2h: int) -> bool:
    """Replay a pop log and check the drain-fraction rule after every device-to-host pop."""
    ph = pd = 0
    for _seq, direction, _t, _link in pop_log:
        if direction == H2D:
            ph += 1
        else:
            pd += 1
            if total_h2d and pd * total_h2d > ph * total_d2h:
                return False
    return True


def _validate(engine: Engine, dst_h2d, src_h2d, dst_d2h, src_d2h, target, packet, links):
    topo = engine.topology
    if packet is None or packet <= 0:
        raise ExchangeError(f"packet size must be > 0, got {packet}")
    if links is None or not 1 <= links <= topo.num_devices:
        raise ExchangeError(f"links must be in [1, {topo.num_devices}], got {links}")
    if not (isinstance(target, int) and 0 <= target < topo.num_devices):
        raise ExchangeError(f"unknown target device {target!r}")
    groups = [RefGroup.of(g) for g in (dst_h2d, src_h2d, dst_d2h, src_d2h)]
    dh, sh, dd, sd = groups
    if sh.total_len != dh.total_len:
        raise ExchangeError("H2D source and destination sizes differ")
    if sd.total_len != dd.total_len:
        raise ExchangeError("D2H source and destination sizes differ")
    for ref in sh:
        if ref.space != HOST:
            raise ExchangeError("H2D sources must live in host memory")
    for ref in dh:
        if ref.space != target:
            raise ExchangeError("H2D destinations must live on the target device")
    for ref in sd:
        if ref.space != target:
            raise ExchangeError("D2H sources must live on the target device")
    for ref in dd:
        if ref.space != HOST:
            raise ExchangeError("D2H destinations must live in host memory")
    devices = [target] + [d for d in range(topo.num_devices) if d != target][: links - 1]
    return groups, devices


def exchange_process(
    engine: Engine,
    dst_h2d,
    src_h2d,
    dst_d2h,
    src_d2h,
    target: int = 0,
    packet: int = DEFAULT_PACKET,
    links: int | None = None,
    stall_wait: float = DEFAULT_STALL,
    policy: str = DRAIN,
    gap: int = 8,
):
    """Generator form of :func:`exchange` for composition inside other processes."""
    links = engine.topology.num_devices if links is None else links
    (dh, sh, dd, sd), devices = _validate(engine, dst_h2d, src_h2d, dst_d2h, src_d2h, target, packet, links)
    queues = {
        H2D: deque(packetize(sh, dh, packet, H2D)) if sh.total_len else deque(),
        D2H: deque(packetize(sd, dd, packet, D2H)) if sd.total_len else deque(),
    }
    state = QueueState(len(queues[H2D]), len(queues[D2H]))
    pop_log: list[tuple] = []
    per_link: dict[int, int] = {d: 0 for d in devices}
    stats = {"stalls": 0, "max_staging": 0, "max_inflight": 0}
    start = engine.now

    def pop(direction: str, dev: int):
        if not flow_control_allow(state, direction, policy, gap):
            return None
        task = queues[direction].popleft()
        if direction == H2D:
            state.popped_h2d += 1
        else:
            state.popped_d2h += 1
        pop_log.append((task.seq, direction, engine.now, dev))
        per_link[dev] += task.len
        return task

    def acquire(direction: str, dev: int):
        # retry after a short stall while flow control holds the queue back
        while state.remaining(direction) > 0:
            task = pop(direction, dev)
            if task is not None:
                return task
            stats["stalls"] += 1
            yield engine.timeout(stall_wait)
        return None

    def direct_worker(direction: str, dev: int):
        while True:
            task = yield from acquire(direction, dev)
            if task is None:
                return
            stats["max_inflight"] = max(stats["max_inflight"], 1)
            yield engine.submit_copy(task.src, task.dst, task.len)

    def indirect_worker(direction: str, dev: int):
        slot_size = min(packet, max((t.len for t in queues[direction]), default=1))
        slots = [engine.alloc(dev, slot_size) for _ in range(2)] if engine.real else [dev, dev]
        buffered = None  # (task, slot index)
        occupancy = 0
        while True:
            ops = []
            if buffered is not None:
                task, idx = buffered
                stage = slots[idx].sub(0, task.len) if engine.real else dev
                ops.append(engine.submit_copy(stage, task.dst, task.len))
            nxt = yield from acquire(direction, dev)
            if nxt is not None:
                idx = 0 if buffered is None else 1 - buffered[1]
                stage = slots[idx].sub(0, nxt.len) if engine.real else dev
                ops.append(engine.submit_copy(nxt.src, stage, nxt.len))
                occupancy += 1
                stats["max_staging"] = max(stats["max_staging"], occupancy)
                nxt = (nxt, idx)
            if not ops:
                break
            stats["max_inflight"] = max(stats["max_inflight"], 1)  # one copy per hop
            yield engine.all_of(ops)
            if buffered is not None:
                occupancy -= 1
            buffered = nxt
        if engine.real:
            for s in slots:
                engine.free(s)

    workers = []
    for dev in devices:
        for direction in (H2D, D2H):
            if not queues[direction]:
                continue
            body = direct_worker if dev == target else indirect_worker
            workers.append(engine.process(body(direction, dev), name=f"{direction}@{dev}"))
    yield engine.all_of(workers)
    return ExchangeReport(
        elapsed=engine.now - start,
        bytes_h2d=sh.total_len,
        bytes_d2h=sd.total_len,
        per_link_bytes=per_link,
        scheduler="exchange",
        links=links,
        packet=packet,
        stalls=stats["stalls"],
        max_staging=stats["max_staging"],
        max_inflight_per_hop=stats["max_inflight"],
        pop_log=pop_log,
        flow_ok=check_pop_log(pop_log, state.total_h2d, state.total_d2h) if policy == DRAIN else True,
    )


def exchange(engine: Engine, dst_h2d, src_h2d, dst_d2h, src_d2h, target: int = 0,
             packet: int = DEFAULT_PACKET, links: int | None = None, **kw) -> ExchangeReport:
    """Move ``src_h2d``->``dst_h2d`` and ``src_d2h``->``dst_d2h`` concurrently.

    Runs synchronously in virtual time and returns the report.
    """
    gen = exchange_process(engine, dst_h2d, src_h2d, dst_d2h, src_d2h, target, packet, links, **kw)
    return engine.run(gen, name="exchange")


def naive_exchange_process(
    engine: Engine,
    dst_h2d,
    src_h2d,
    dst_d2h,
    src_d2h,
    target: int = 0,
    packet: int = DEFAULT_PACKET,
    links: int | None = None,
):
    """Runtime-DAG baseline: static round-robin packets, shared FIFO hardware queues.

    Every device owns two FIFO copy queues: one for copies landing in its
    memory and one for copies leaving it.  Both directions' hops share those
    queues, so a queued copy waits behind whatever was submitted before it
    (head-of-line blocking).  All copies are submitted up front with event
    dependencies between the two hops of a forwarded packet, one staging
    buffer per packet, and no flow control.
    """
    links = engine.topology.num_devices if links is None else links
    (dh, sh, dd, sd), devices = _validate(engine, dst_h2d, src_h2d, dst_d2h, src_d2h, target, packet, links)
    h2d = packetize(sh, dh, packet, H2D) if sh.total_len else []
    d2h = packetize(sd, dd, packet, D2H) if sd.total_len else []
    hwq: dict[tuple, list] = {(d, kind): [] for d in devices for kind in ("in", "out")}
    per_link: dict[int, int] = {d: 0 for d in devices}
    pop_log: list[tuple] = []
    start = engine.now

    def add_task(task: TransferTask, dev: int):
        per_link[dev] += task.len
        pop_log.append((task.seq, task.direction, engine.now, dev))
        if dev == target:
            kind = "in" if task.direction == H2D else "out"
            hwq[(dev, kind)].append((task.src, task.dst, task.len, None, None, None))
            return
        stage = engine.alloc(dev, task.len) if engine.real else dev
        landed = engine.event()
        hwq[(dev, "in")].append((task.src, stage, task.len, None, landed, None))
        hwq[(dev, "out")].append((stage, task.dst, task.len, landed, None, stage if engine.real else None))

    for i in range(max(len(h2d), len(d2h))):
        if i < len(h2d):
            add_task(h2d[i], devices[i % len(devices)])
        if i < len(d2h):
            add_task(d2h[i], devices[i % len(devices)])

    def fifo(ops):
        for src, dst, n, wait_for, signal, release in ops:
            if wait_for is not None and not wait_for.triggered:
                yield wait_for
            yield engine.submit_copy(src, dst, n)
            if signal is not None:
                signal.succeed()
            if release is not None:
                engine.free(release)

    procs = [engine.process(fifo(ops), name=f"hwq{key}") for key, ops in hwq.items() if ops]
    yield engine.all_of(procs)
    return ExchangeReport(
        elapsed=engine.now - start,
        bytes_h2d=sh.total_len,
        bytes_d2h=sd.total_len,
        per_link_bytes=per_link,
        scheduler="naive",
        links=links,
        packet=packet,
        max_inflight_per_hop=1,
        pop_log=pop_log,
        flow_ok=True,
    )


def naive_exchange(engine: Engine, dst_h2d, src_h2d, dst_d2h, src_d2h, target: int = 0,
                   packet: int = DEFAULT_PACKET, links: int | None = None) -> ExchangeReport:
    gen = naive_exchange_process(engine, dst_h2d, src_h2d, dst_d2h, src_d2h, target, packet, links)
    return engine.run(gen, name="naive_exchange")


def phantom_groups(engine: Engine, nbytes_h2d: int, nbytes_d2h: int, target: int = 0):
    """Host/device regions for metadata-only transfers of the given sizes."""
    def pair(n, src_space, dst_space):
        if n <= 0:
            return RefGroup(), RefGroup()
        return RefGroup([MemRef(src_space, 0, int(n))]), RefGroup([MemRef(dst_space, 0, int(n))])

    sh, dh = pair(nbytes_h2d, HOST, target)
    sd, dd = pair(nbytes_d2h, target, HOST)
    # H2D and D2H phantom regions may alias; nothing is copied in phantom mode
    return dh, sh, dd, sd
