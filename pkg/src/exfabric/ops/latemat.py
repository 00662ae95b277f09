"""Late materialization: when to fetch only the touched cache lines of a column.

Reading a column through the exchange moves every byte but spreads it over
``N`` links.  Zero-copy access moves only the cache lines that selected
elements live in, over the target device's own link.  The two cost the same
when the selected fraction equals ``E / (C_l2 * N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..fabric import HOST, Engine

EXCHANGE = "exchange"
ZERO_COPY = "zero_copy"


def late_mat_threshold(element_size: int, cache_line: int = 64, n_exchange: int = 4) -> Fraction:
    """Selectivity below which zero-copy beats a full multi-link transfer (exact)."""
    if element_size <= 0 or cache_line <= 0 or n_exchange <= 0:
        raise ValueError("element size, cache line and link count must all be positive")
    return Fraction(int(element_size), int(cache_line) * int(n_exchange))


@dataclass(frozen=True)
class LateMatPolicy:
    element_size: int = 4
    cache_line: int = 64
    n_exchange: int = 4

    def __post_init__(self):
        th = late_mat_threshold(self.element_size, self.cache_line, self.n_exchange)
        if th > 1:
            raise ValueError(f"threshold {th} > 1: an element may not exceed cache_line * n_exchange bytes")

    @property
    def threshold(self) -> Fraction:
        return late_mat_threshold(self.element_size, self.cache_line, self.n_exchange)


def choose_transfer_mode(selectivity_est: float, policy: LateMatPolicy) -> str:
    if not 0 <= selectivity_est <= 1:
        raise ValueError(f"selectivity must lie in [0, 1], got {selectivity_est}")
    return ZERO_COPY if Fraction(selectivity_est) < policy.threshold else EXCHANGE


def touched_lines(positions: np.ndarray, element_size: int, cache_line: int) -> int:
    """Distinct cache lines holding the given element positions."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        return 0
    lines = (positions * element_size) // cache_line
    return int(np.count_nonzero(np.diff(np.sort(lines))) + 1)


def strided_touched_bytes(n: int, sel: int, element_size: int, cache_line: int) -> int:
    """Bytes pulled by zero-copy when every ``sel``-th of ``n`` elements is read."""
    if n <= 0:
        return 0
    picked = math.ceil(n / sel)
    if sel * element_size >= cache_line:
        return picked * cache_line
    span = n * element_size
    return math.ceil(span / cache_line) * cache_line


def charge_transfer(engine: Engine, nbytes: int, mode: str, policy: LateMatPolicy, target: int = 0) -> float:
    """Advance ``engine`` by the time to pull ``nbytes`` to ``target``; returns seconds.

    Exchange mode splits the bytes evenly over the first ``n_exchange`` links;
    zero-copy uses the target's link alone.  No per-copy latency is charged.
    """
    if nbytes <= 0:
        return 0.0
    topo = engine.topology
    if mode == EXCHANGE:
        links = min(policy.n_exchange, topo.num_devices)
        devices = [target] + [d for d in range(topo.num_devices) if d != target][: links - 1]
    elif mode == ZERO_COPY:
        devices = [target]
    else:
        raise ValueError(f"unknown transfer mode {mode!r}")
    start = engine.now
    share, extra = divmod(int(nbytes), len(devices))
    for i, d in enumerate(devices):
        n = share + (1 if i < extra else 0)
        if n:
            engine.submit_copy(HOST, d, n, latency=0.0)
    engine.run_until_idle()
    return engine.now - start


def timing_engine(engine: Engine | None) -> Engine:
    """Metadata-only engine for time accounting (reuses ``engine`` when it is one)."""
    if engine is None:
        return Engine(payload_mode="phantom")
    return engine if not engine.real else Engine(engine.topology, payload_mode="phantom")


@dataclass
class ScanResult:
    aggregate: int
    seconds: float
    bytes_moved: int
    mode: str


def selective_scan(column: np.ndarray | int, sel: int, mode: str, engine: Engine | None = None,
                   policy: LateMatPolicy | None = None, target: int = 0) -> ScanResult:
    """Sum every ``sel``-th element and charge the modeled transfer time.

    ``column`` may be an element count for a timing-only run (aggregate 0).
    """
    if sel < 1:
        raise ValueError(f"stride must be >= 1, got {sel}")
    if isinstance(column, (int, np.integer)):
        n, agg = int(column), 0
        esize = (policy or LateMatPolicy()).element_size
    else:
        column = np.asarray(column)
        n = int(column.size)
        esize = column.dtype.itemsize
        with np.errstate(over="ignore"):
            agg = int(np.sum(column[::sel], dtype=np.uint64))
    policy = policy or LateMatPolicy(element_size=esize)
    if mode == EXCHANGE:
        nbytes = n * esize
    elif mode == ZERO_COPY:
        nbytes = strided_touched_bytes(n, sel, esize, policy.cache_line)
    else:
        raise ValueError(f"unknown transfer mode {mode!r}")
    secs = charge_transfer(timing_engine(engine), nbytes, mode, policy, target)
    return ScanResult(agg, secs, nbytes, mode)
