"""Chunked operators built on the pipelined executor."""

from .join import (JoinError, JoinPartitionSpec, JoinResult, PartitionedTable, UniformBounds, find_boundary,
                   hash_join_sum, map_join_partitions, radix_partition)
from .latemat import (EXCHANGE, ZERO_COPY, LateMatPolicy, ScanResult, choose_transfer_mode, late_mat_threshold,
                      selective_scan)
from .sort import PivotSet, SortResult, find_pivots, phantom_pivots, sort_out_of_core
from .star import Dimension, StarQueryError, StarResult, star_query
from .tables import ColumnTable, fk_tables, read_column, read_table, uniform_u64, write_column

__all__ = [
    "ColumnTable", "Dimension", "EXCHANGE", "JoinError", "JoinPartitionSpec", "JoinResult", "LateMatPolicy",
    "PartitionedTable", "PivotSet", "ScanResult", "SortResult", "StarQueryError", "StarResult", "UniformBounds",
    "ZERO_COPY", "choose_transfer_mode", "find_boundary", "find_pivots", "fk_tables", "hash_join_sum",
    "late_mat_threshold", "map_join_partitions", "phantom_pivots", "radix_partition", "read_column", "read_table",
    "selective_scan", "sort_out_of_core", "star_query", "uniform_u64", "write_column",
]
