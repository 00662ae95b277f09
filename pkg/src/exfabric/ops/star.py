"""Filter, join and aggregate over one fact table and a few small dimensions.

Dimensions are filtered once and kept device-resident.  The fact table is
streamed in chunks; its foreign-key columns are probed in dimension order and
each column is fetched either whole over the exchange or through zero-copy,
depending on how many rows are still alive when it is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..fabric import Engine
from .latemat import EXCHANGE, LateMatPolicy, charge_transfer, choose_transfer_mode, timing_engine, touched_lines


class StarQueryError(ValueError):
    pass


@dataclass
class Dimension:
    """A dimension table: primary keys, one attribute, a predicate on the attribute.

    ``fact_column`` names the fact column holding the foreign key.
    """

    name: str
    keys: np.ndarray
    attr: np.ndarray
    fact_column: str
    pred: Callable[[np.ndarray], np.ndarray] = lambda attr: np.ones(attr.shape, dtype=bool)

    @property
    def nbytes(self) -> int:
        return int(np.asarray(self.keys).nbytes + np.asarray(self.attr).nbytes)


@dataclass
class StarResult:
    groups: dict[int, int]
    modes: dict[str, str]
    estimators: dict[str, float]
    seconds: float
    bytes_moved: dict[str, int] = field(default_factory=dict)


def _build(dim: Dimension):
    keys = np.asarray(dim.keys)
    attr = np.asarray(dim.attr)
    keep = np.asarray(dim.pred(attr), dtype=bool)
    if keep.shape != keys.shape:
        raise StarQueryError(f"{dim.name}: predicate returned shape {keep.shape}, expected {keys.shape}")
    order = np.argsort(keys[keep], kind="stable")
    return keys[keep][order], attr[keep][order], float(keep.mean()) if keys.size else 0.0


def _probe(table_keys, fk):
    pos = np.searchsorted(table_keys, fk)
    pos_c = np.minimum(pos, max(table_keys.size - 1, 0))
    hit = (table_keys.size > 0) & (table_keys[pos_c] == fk) if table_keys.size else np.zeros(fk.shape, bool)
    return hit, pos_c


def star_query(fact: dict[str, np.ndarray], dims: list[Dimension], measure: str, group_by: str | None = None,
               engine: Engine | None = None, policy: LateMatPolicy | None = None,
               chunk_rows: int = 1 << 20, device_buffer: int | None = None, target: int = 0) -> StarResult:
    """SUM(fact[measure]) over rows whose every foreign key survives its dimension filter.

    ``group_by`` names a dimension whose attribute groups the sum (a single
    group keyed 0 otherwise).  Sums wrap at 2**64.
    """
    if not dims:
        raise StarQueryError("need at least one dimension")
    if len(dims) > 4:
        raise StarQueryError("at most four dimensions are supported")
    tengine = timing_engine(engine)
    budget = device_buffer if device_buffer is not None else tengine.topology.device_mem
    dim_bytes = sum(d.nbytes for d in dims)
    if dim_bytes > budget:
        raise StarQueryError(f"dimension tables need {dim_bytes} bytes, device buffer holds {budget}")
    names = {d.name for d in dims}
    if group_by is not None and group_by not in names:
        raise StarQueryError(f"unknown group-by dimension {group_by!r}")
    for col in [d.fact_column for d in dims] + [measure]:
        if col not in fact:
            raise StarQueryError(f"fact table has no column {col!r}")
    rows = {np.asarray(c).size for c in fact.values()}
    if len(rows) != 1:
        raise StarQueryError("fact columns differ in length")
    n_rows = rows.pop()

    built = [_build(d) for d in dims]
    # a column's estimator is the fraction of rows still alive when it is read
    order = [d.fact_column for d in dims] + [measure]
    est, alive = {}, 1.0
    for d, (_, _, s) in zip(dims, built):
        est[d.fact_column] = min(est.get(d.fact_column, alive), alive)
        alive *= s
    est[measure] = min(est.get(measure, alive), alive)
    modes = {}
    for col in order:
        esize = np.asarray(fact[col]).dtype.itemsize
        pol = LateMatPolicy(esize, (policy or LateMatPolicy()).cache_line, (policy or LateMatPolicy()).n_exchange)
        modes[col] = choose_transfer_mode(est[col], pol)

    groups: dict[int, int] = {}
    moved = {c: 0 for c in order}
    seconds = 0.0
    base_policy = policy or LateMatPolicy()
    for start in range(0, n_rows, chunk_rows):
        stop = min(start + chunk_rows, n_rows)
        live = np.arange(start, stop)
        fetched: set[str] = set()
        group_attr = None

        def fetch(col, positions):
            nonlocal seconds
            if col in fetched:
                return
            fetched.add(col)
            arr = np.asarray(fact[col])
            esize = arr.dtype.itemsize
            if modes[col] == EXCHANGE:
                nbytes = (stop - start) * esize
            else:
                nbytes = touched_lines(positions - start, esize, base_policy.cache_line) * base_policy.cache_line
            moved[col] += nbytes
            pol = LateMatPolicy(esize, base_policy.cache_line, base_policy.n_exchange)
            seconds += charge_transfer(tengine, nbytes, modes[col], pol, target)

        for d, (tkeys, tattr, _) in zip(dims, built):
            fetch(d.fact_column, live)
            fk = np.asarray(fact[d.fact_column])[live]
            hit, pos = _probe(tkeys, fk)
            if d.name == group_by:
                group_attr = tattr[pos][hit]
            elif group_attr is not None:
                group_attr = group_attr[hit]
            live = live[hit]
        fetch(measure, live)
        vals = np.asarray(fact[measure])[live].astype(np.uint64)
        keys = group_attr if group_attr is not None else np.zeros(live.size, dtype=np.int64)
        if live.size:
            uk, inv = np.unique(keys, return_inverse=True)
            with np.errstate(over="ignore"):
                sums = np.zeros(uk.size, dtype=np.uint64)
                np.add.at(sums, inv, vals)
            for k, s in zip(uk.tolist(), sums.tolist()):
                groups[k] = (groups.get(k, 0) + s) % (1 << 64)
    return StarResult(dict(sorted(groups.items())), modes, est, seconds, moved)
