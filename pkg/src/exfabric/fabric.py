"""Virtual-time model of a host with several directly attached accelerators.

The engine is a small discrete-event kernel: generator-based processes yield
events (timeouts, copy handles, joins) and a fluid model shares link
bandwidth between the copies that are in flight.  Rates are piecewise
constant and recomputed only when the set of active flows changes.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Union

import numpy as np

HOST = "host"
Endpoint = Union[str, int]

_GIB = 1 << 30


class FabricError(ValueError):
    """Invalid topology, endpoint or copy request."""


@dataclass(frozen=True)
class Topology:
    num_devices: int = 4
    link_bw: float = 28e9
    host_cap: float = 150e9
    fabric_bw: float = 100e9
    d2h_priority: bool = True
    # fixed runtime cost paid by every copy before data starts moving
    copy_latency: float = 20e-6
    device_mem: int = 32 * _GIB

    def __post_init__(self):
        if not isinstance(self.num_devices, int) or self.num_devices < 1:
            raise FabricError(f"num_devices must be a positive integer, got {self.num_devices!r}")
        for name in ("link_bw", "host_cap", "fabric_bw"):
            if not getattr(self, name) > 0:
                raise FabricError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.copy_latency < 0:
            raise FabricError("copy_latency must be >= 0")
        if self.device_mem <= 0:
            raise FabricError("device_mem must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def build_topology(config: dict | None = None) -> Topology:
    """Topology from a key-value document; omitted keys take the defaults."""
    config = dict(config or {})
    known = {f.name for f in fields(Topology)}
    unknown = sorted(set(config) - known)
    if unknown:
        raise FabricError(f"unknown topology keys: {unknown}")
    if "num_devices" in config:
        n = config["num_devices"]
        if isinstance(n, float) and n.is_integer():
            config["num_devices"] = int(n)
    return Topology(**config)


def load_topology(path: str | Path) -> Topology:
    with open(path) as fh:
        doc = json.load(fh)
    return build_topology(doc.get("topology", doc))


def _check_endpoint(topo: Topology, ep: Endpoint) -> None:
    if ep == HOST:
        return
    if isinstance(ep, (int, np.integer)) and not isinstance(ep, bool) and 0 <= ep < topo.num_devices:
        return
    raise FabricError(f"unknown endpoint {ep!r}")


def path_resources(topo: Topology, src: Endpoint, dst: Endpoint) -> tuple:
    """Capacity-constrained resources traversed by a single-hop copy."""
    _check_endpoint(topo, src)
    _check_endpoint(topo, dst)
    if src == HOST and dst == HOST:
        raise FabricError("host-to-host copies do not cross the fabric")
    if src == HOST:
        return (("h2d", int(dst)), HOST)
    if dst == HOST:
        return (("d2h", int(src)), HOST)
    if src == dst:
        raise FabricError("device-local copies do not cross the fabric")
    return (("fab", int(src), int(dst)),)


def resource_capacity(topo: Topology, res) -> float:
    if res == HOST:
        return topo.host_cap
    if res[0] == "fab":
        return topo.fabric_bw
    return topo.link_bw


@dataclass(eq=False)
class Flow:
    src: Endpoint
    dst: Endpoint
    remaining: float
    flow_id: int = 0
    assigned_rate: float = 0.0
    max_rate: float = math.inf
    resources: tuple = ()

    @property
    def is_d2h(self) -> bool:
        return self.dst == HOST

    @property
    def is_h2d(self) -> bool:
        return self.src == HOST


def allocate_rates(flows: Iterable[Flow], topo: Topology) -> dict[int, float]:
    """Progressive filling with optional strict priority for device-to-host flows.

    Flows are filled max-min fairly within a priority class against the
    capacity left by higher classes.  Device-to-host flows (and fabric-only
    hops, which share nothing with host traffic) form the first class when
    ``topo.d2h_priority`` is set; host-to-device flows share what remains.
    """
    flows = sorted(flows, key=lambda f: f.flow_id)
    for f in flows:
        if not f.resources:
            f.resources = path_resources(topo, f.src, f.dst)
    residual: dict[Any, float] = {}
    for f in flows:
        for r in f.resources:
            residual.setdefault(r, resource_capacity(topo, r))
    if topo.d2h_priority:
        classes = [[f for f in flows if not f.is_h2d], [f for f in flows if f.is_h2d]]
    else:
        classes = [flows]
    rates: dict[int, float] = {}
    for cls in classes:
        if cls:
            _fill(cls, residual, rates)
    return rates


def _fill(flows: list[Flow], residual: dict, rates: dict[int, float]) -> None:
    # groups of flows with identical paths and demands fill identically
    groups: dict[tuple, list[Flow]] = {}
    for f in flows:
        groups.setdefault((f.resources, f.max_rate), []).append(f)
    level = {k: 0.0 for k in groups}
    active = list(groups)  # insertion order keeps float sums reproducible
    tol = 1e-12
    while active:
        users: dict[Any, int] = {}
        for k in active:
            for r in k[0]:
                users[r] = users.get(r, 0) + len(groups[k])
        inc = math.inf
        for r, n in users.items():
            inc = min(inc, max(residual[r], 0.0) / n)
        for k in active:
            inc = min(inc, k[1] - level[k])
        if not math.isfinite(inc):
            raise FabricError("unbounded allocation: flow without constrained resources")
        for k in active:
            level[k] += inc
            for r in k[0]:
                residual[r] -= inc * len(groups[k])
        still = []
        for k in active:
            if level[k] >= k[1] * (1 - tol) or any(residual[r] <= 1e-3 for r in k[0]):
                continue
            still.append(k)
        if len(still) == len(active):  # numerical guard; every pass saturates something
            still = []
        active = still
    for k, fs in groups.items():
        for f in fs:
            rates[f.flow_id] = level[k]


class Event:
    """One-shot occurrence in virtual time; processes wait on it by yielding it."""

    __slots__ = ("engine", "callbacks", "triggered", "value")

    def __init__(self, engine: "Engine"):
        self.engine = engine
        self.callbacks: list[Callable[["Event"], None]] = []
        self.triggered = False
        self.value = None

    def succeed(self, value=None) -> "Event":
        if self.triggered:
            raise RuntimeError("event already triggered")
        self.triggered = True
        self.value = value
        cbs, self.callbacks = self.callbacks, []
        for cb in cbs:
            self.engine._schedule(0.0, cb, self)
        return self

    def add_callback(self, cb: Callable[["Event"], None]) -> None:
        if self.triggered:
            self.engine._schedule(0.0, cb, self)
        else:
            self.callbacks.append(cb)


class Process(Event):
    __slots__ = ("gen", "name")

    def __init__(self, engine: "Engine", gen, name: str = ""):
        super().__init__(engine)
        self.gen = gen
        self.name = name
        engine._schedule(0.0, self._resume, None)

    def _resume(self, ev: Event | None) -> None:
        try:
            target = self.gen.send(None if ev is None else ev.value)
        except StopIteration as stop:
            self.succeed(stop.value)
            return
        if not isinstance(target, Event):
            raise TypeError(f"process {self.name!r} yielded {target!r}, expected an Event")
        target.add_callback(self._resume)


class TransferHandle(Event):
    __slots__ = ("nbytes", "src", "dst", "submitted", "started", "finished", "flow_ids")

    def __init__(self, engine, src, dst, nbytes):
        super().__init__(engine)
        self.src, self.dst, self.nbytes = src, dst, nbytes
        self.submitted = engine.now
        self.started: float | None = None
        self.finished: float | None = None
        self.flow_ids: list[int] = []


@dataclass(frozen=True)
class MemRef:
    """Byte range inside one address space (``"host"`` or a device index)."""

    space: Endpoint
    offset: int
    len: int

    def __post_init__(self):
        if self.len <= 0:
            raise FabricError(f"MemRef length must be > 0, got {self.len}")
        if self.offset < 0:
            raise FabricError("MemRef offset must be >= 0")

    @property
    def end(self) -> int:
        return self.offset + self.len

    def sub(self, offset: int, length: int) -> "MemRef":
        if offset < 0 or offset + length > self.len:
            raise FabricError("sub-range outside MemRef")
        return MemRef(self.space, self.offset + offset, length)

    def overlaps(self, other: "MemRef") -> bool:
        return self.space == other.space and self.offset < other.end and other.offset < self.end


@dataclass
class _Space:
    data: np.ndarray | None
    allocs: dict[int, int] = field(default_factory=dict)  # offset -> len
    high_water: int = 0


class Engine:
    """Single-threaded virtual-time simulator over a :class:`Topology`."""

    def __init__(self, topology: Topology | None = None, payload_mode: str = "phantom", trace: bool = False):
        if payload_mode not in ("real", "phantom"):
            raise FabricError(f"payload_mode must be 'real' or 'phantom', got {payload_mode!r}")
        self.topology = topology or Topology()
        self.payload_mode = payload_mode
        self.now = 0.0
        self._queue: list = []
        self._seq = 0
        self._flows: dict[int, Flow] = {}
        self._flow_done: dict[int, Callable[[], None]] = {}
        self._next_flow_id = 0
        self._dirty = False
        self._last_advance = 0.0
        self._next_finish: float = math.inf
        self.trace_enabled = trace
        self.trace: list[dict] = []
        self.epochs = 0
        self.capacity_violations = 0
        self.max_utilization = 0.0
        self.bytes_moved: dict[tuple, float] = {}
        self._spaces: dict[Endpoint, _Space] = {}

    @property
    def real(self) -> bool:
        return self.payload_mode == "real"

    # -- scheduling primitives ------------------------------------------------

    def _schedule(self, delay: float, fn, arg) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (self.now + delay, self._seq, fn, arg))

    def event(self) -> Event:
        return Event(self)

    def timeout(self, delay: float, value=None) -> Event:
        if delay < 0:
            raise FabricError("negative timeout")
        ev = Event(self)
        self._schedule(delay, lambda _arg: ev.succeed(value), None)
        return ev

    def process(self, gen, name: str = "") -> Process:
        return Process(self, gen, name)

    def all_of(self, events: Iterable[Event]) -> Event:
        events = list(events)
        done = Event(self)
        pending = [len(events)]
        if not events:
            return done.succeed([])

        def _one(_ev):
            pending[0] -= 1
            if pending[0] == 0:
                done.succeed([e.value for e in events])

        for e in events:
            e.add_callback(_one)
        return done

    # -- memory ---------------------------------------------------------------

    def _space(self, space: Endpoint) -> _Space:
        _check_endpoint(self.topology, space)
        sp = self._spaces.get(space)
        if sp is None:
            sp = _Space(np.zeros(0, dtype=np.uint8) if self.real else None)
            self._spaces[space] = sp
        return sp

    def alloc(self, space: Endpoint, nbytes: int) -> MemRef:
        """First-fit allocation; device spaces are bounded by ``device_mem``."""
        sp = self._space(space)
        nbytes = int(nbytes)
        offset = 0
        for off in sorted(sp.allocs):
            if off - offset >= nbytes:
                break
            offset = max(offset, off + sp.allocs[off])
        if space != HOST and offset + nbytes > self.topology.device_mem:
            raise FabricError(f"device {space} out of memory allocating {nbytes} bytes")
        ref = MemRef(space, offset, nbytes)
        sp.allocs[offset] = nbytes
        sp.high_water = max(sp.high_water, ref.end)
        if self.real and sp.data.size < ref.end:
            grown = np.zeros(max(ref.end, 2 * sp.data.size), dtype=np.uint8)
            grown[: sp.data.size] = sp.data
            sp.data = grown
        return ref

    def free(self, ref: MemRef) -> None:
        sp = self._space(ref.space)
        if sp.allocs.get(ref.offset) != ref.len:
            raise FabricError(f"free of unallocated region {ref}")
        del sp.allocs[ref.offset]

    def view(self, ref: MemRef) -> np.ndarray:
        """Writable uint8 view of a region (real mode only)."""
        if not self.real:
            raise FabricError("phantom engines carry no payload")
        sp = self._space(ref.space)
        if ref.end > sp.data.size:
            raise FabricError(f"region {ref} outside allocated memory")
        return sp.data[ref.offset : ref.end]

    def put_host(self, array: np.ndarray | int) -> MemRef:
        """Place an array (or, in phantom mode, a byte count) in host memory."""
        if isinstance(array, (int, np.integer)):
            if self.real:
                raise FabricError("real engines need actual host data")
            return self.alloc(HOST, int(array))
        raw = np.ascontiguousarray(array).view(np.uint8).reshape(-1)
        ref = self.alloc(HOST, raw.size)
        if self.real:
            self.view(ref)[:] = raw
        return ref

    # -- copies ---------------------------------------------------------------

    def submit_copy(
        self,
        src: MemRef | Endpoint,
        dst: MemRef | Endpoint,
        nbytes: int | None = None,
        via: Endpoint | None = None,
        max_rate: float = math.inf,
        latency: float | None = None,
    ) -> TransferHandle:
        """Start a copy; the returned handle triggers when the last byte lands.

        ``via`` forwards through an intermediate device (store-and-forward of the
        whole request, each hop charged against its own link).
        """
        src_ep = src.space if isinstance(src, MemRef) else src
        dst_ep = dst.space if isinstance(dst, MemRef) else dst
        if nbytes is None:
            if not isinstance(src, MemRef):
                raise FabricError("byte count required for endpoint copies")
            nbytes = src.len
        if nbytes <= 0:
            raise FabricError(f"copy size must be > 0, got {nbytes}")
        for ref in (src, dst):
            if isinstance(ref, MemRef) and ref.len != nbytes:
                raise FabricError(f"region {ref} does not match copy size {nbytes}")
        if isinstance(src, MemRef) and isinstance(dst, MemRef) and src.overlaps(dst):
            raise FabricError("overlapping source and destination regions")
        if self.real and not (isinstance(src, MemRef) and isinstance(dst, MemRef)):
            raise FabricError("real-mode copies need source and destination regions")
        latency = self.topology.copy_latency if latency is None else latency
        handle = TransferHandle(self, src_ep, dst_ep, nbytes)
        if via is None:
            path_resources(self.topology, src_ep, dst_ep)
            self._schedule(latency, lambda _a: self._start_flow(handle, src, dst, src_ep, dst_ep, nbytes, max_rate), None)
            return handle
        path_resources(self.topology, src_ep, via)
        path_resources(self.topology, via, dst_ep)
        stage = self.alloc(via, nbytes) if self.real else via

        def _hops():
            first = self.submit_copy(src, stage, nbytes, max_rate=max_rate, latency=latency)
            yield first
            handle.started = first.started
            handle.flow_ids.extend(first.flow_ids)
            second = self.submit_copy(stage, dst, nbytes, max_rate=max_rate, latency=latency)
            yield second
            handle.flow_ids.extend(second.flow_ids)
            if isinstance(stage, MemRef):
                self.free(stage)
            handle.finished = self.now
            handle.succeed(handle)

        self.process(_hops(), name="forward")
        return handle

    def _start_flow(self, handle, src, dst, src_ep, dst_ep, nbytes, max_rate):
        self._advance()
        fid = self._next_flow_id
        self._next_flow_id += 1
        flow = Flow(src_ep, dst_ep, float(nbytes), fid, max_rate=max_rate,
                    resources=path_resources(self.topology, src_ep, dst_ep))
        self._flows[fid] = flow
        handle.flow_ids.append(fid)
        if handle.started is None:
            handle.started = self.now
        self._log("start", fid, 0.0)

        def _done():
            if self.real:
                self.view(dst)[:] = self.view(src)
            key = (src_ep, dst_ep)
            self.bytes_moved[key] = self.bytes_moved.get(key, 0.0) + nbytes
            handle.finished = self.now
            handle.succeed(handle)

        self._flow_done[fid] = _done
        self._dirty = True

    def _advance(self) -> None:
        dt = self.now - self._last_advance
        if dt > 0:
            for f in self._flows.values():
                f.remaining -= f.assigned_rate * dt
        self._last_advance = self.now

    def _reallocate(self) -> None:
        self._advance()
        self._dirty = False
        flows = list(self._flows.values())
        rates = allocate_rates(flows, self.topology) if flows else {}
        self.epochs += 1
        load: dict[Any, float] = {}
        nxt = math.inf
        for f in flows:
            f.assigned_rate = rates[f.flow_id]
            for r in f.resources:
                load[r] = load.get(r, 0.0) + f.assigned_rate
            if f.assigned_rate > 0:
                nxt = min(nxt, self.now + max(f.remaining, 0.0) / f.assigned_rate)
            self._log("rate", f.flow_id, f.assigned_rate)
        for r, used in load.items():
            cap = resource_capacity(self.topology, r)
            self.max_utilization = max(self.max_utilization, used / cap)
            if used > cap * (1 + 1e-9):
                self.capacity_violations += 1
        self._next_finish = nxt

    def _complete_flows(self) -> None:
        self._advance()
        t = self.now
        finished = []
        for fid, f in self._flows.items():
            if f.assigned_rate > 0 and (t + f.remaining / f.assigned_rate <= t * (1 + 1e-12) + 1e-15 or f.remaining <= 1e-6):
                finished.append(fid)
        if not finished:  # rounding pushed the estimate past this instant
            fid = min(self._flows, key=lambda i: (self._flows[i].remaining / max(self._flows[i].assigned_rate, 1e-300), i))
            finished.append(fid)
        for fid in sorted(finished):
            self._flows.pop(fid)
            self._log("done", fid, 0.0)
            self._flow_done.pop(fid)()
        self._dirty = True

    def _log(self, kind: str, fid: int, rate: float) -> None:
        if self.trace_enabled:
            self.trace.append({"t": self.now, "event": kind, "flow_id": fid, "rate": rate})

    def run_until_idle(self) -> float:
        """Process all pending events in time order; return the final clock."""
        q = self._queue
        while True:
            if self._dirty and (not q or q[0][0] > self.now):
                self._reallocate()
            t_timer = q[0][0] if q else math.inf
            t_flow = self._next_finish if self._flows else math.inf
            if t_timer == math.inf and t_flow == math.inf:
                if self._flows:
                    raise FabricError("stalled flows with zero rate")
                break
            if t_flow <= t_timer:
                self.now = max(self.now, t_flow)
                self._complete_flows()
                self._next_finish = math.inf
            else:
                t, _seq, fn, arg = heapq.heappop(q)
                self.now = max(self.now, t)
                fn(arg)
        self._advance()
        return self.now

    def run(self, gen, name: str = "main"):
        """Run a process to completion and return its value."""
        proc = self.process(gen, name)
        self.run_until_idle()
        if not proc.triggered:
            raise FabricError(f"process {name!r} deadlocked")
        return proc.value

    def export_trace(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
