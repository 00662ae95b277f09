"""Experiment runners, report emitters and cost calculators."""

from .calc import PriceModel, a100_raw_price, load_defaults, price_performance, price_table, system_speedup, tax
from .report import CSV_COLUMNS, emit_report, read_report, render
from .runs import (capacity_ok, run_exchange_bench, run_join_bench, run_scan_bench, run_sort_bench,
                   run_star_bench)

__all__ = [
    "CSV_COLUMNS", "PriceModel", "a100_raw_price", "capacity_ok", "emit_report", "load_defaults",
    "price_performance", "price_table", "read_report", "render", "run_exchange_bench", "run_join_bench",
    "run_scan_bench", "run_sort_bench", "run_star_bench", "system_speedup", "tax",
]
