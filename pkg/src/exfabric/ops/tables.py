"""Two-column u64 tables, a seeded foreign-key generator and flat-file column IO."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

U64 = np.uint64
_LE_U64 = np.dtype("<u8")


@dataclass
class ColumnTable:
    key: np.ndarray
    val: np.ndarray

    def __post_init__(self):
        self.key = np.ascontiguousarray(self.key, dtype=U64)
        self.val = np.ascontiguousarray(self.val, dtype=U64)
        if self.key.shape != self.val.shape or self.key.ndim != 1:
            raise ValueError(f"key/val columns differ in shape: {self.key.shape} vs {self.val.shape}")

    @property
    def rows(self) -> int:
        return int(self.key.size)

    @property
    def nbytes(self) -> int:
        return 16 * self.rows


def fk_tables(rows_a: int, rows_b: int, seed: int = 0) -> tuple[ColumnTable, ColumnTable]:
    """Primary table with unique keys and a probe table whose keys reference it uniformly."""
    if rows_a == 0 and rows_b > 0:
        raise ValueError("foreign keys need at least one primary-key row")
    rng = np.random.default_rng(seed)
    a_key = rng.permutation(rows_a).astype(U64)
    a_val = rng.integers(0, 1 << 32, rows_a, dtype=U64)
    b_key = a_key[rng.integers(0, rows_a, rows_b)]
    b_val = rng.integers(0, 1 << 32, rows_b, dtype=U64)
    return ColumnTable(a_key, a_val), ColumnTable(b_key, b_val)


def uniform_u64(n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, np.iinfo(U64).max, n, dtype=U64, endpoint=True)


def write_column(path: str | Path, column: np.ndarray) -> None:
    np.ascontiguousarray(column, dtype=_LE_U64).tofile(path)


def read_column(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise ValueError(f"{path}: size {len(raw)} is not a multiple of 8 bytes")
    return np.frombuffer(raw, dtype=_LE_U64).astype(U64)


def read_table(key_path: str | Path, val_path: str | Path) -> ColumnTable:
    return ColumnTable(read_column(key_path), read_column(val_path))
