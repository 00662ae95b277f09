"""Machine-readable reports: JSON documents and fixed-column CSV tables."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

SCHEMA = "exfabric-report/1"
CSV_VERSION = 1

# CSV columns per command; changing any list means bumping CSV_VERSION
CSV_COLUMNS = {
    "exchange-bench": ["size", "packet", "links", "scheduler", "throughput", "elapsed_s", "max_staging",
                       "flow_ok", "capacity_ok"],
    "sort": ["links", "elements", "chunk", "total_s", "throughput", "sort_share", "merge_share", "capacity_ok"],
    "join": ["links", "tuples", "chunk_rows", "radix_bits", "total_s", "throughput", "partition_a_share",
             "partition_b_share", "join_share", "capacity_ok"],
    "scan-bench": ["sel", "mode", "seconds", "bytes", "aggregate"],
    "star": ["group", "sum"],
    "calc-speedup": ["speedup_t", "slowdown_t", "slowdown_f", "system_speedup"],
    "calc-price": ["background", "workload", "speedup", "tax_t", "tax_f", "price_performance", "approximate"],
}


class ReportError(RuntimeError):
    pass


def render(report: dict, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        cols = CSV_COLUMNS.get(report.get("command"))
        if cols is None:
            raise ReportError(f"no CSV schema for command {report.get('command')!r}")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["csv_version"] + cols)
        for row in report.get("rows", []):
            w.writerow([CSV_VERSION] + [_cell(row.get(c)) for c in cols])
        return buf.getvalue()
    raise ReportError(f"unknown format {fmt!r}")


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return "" if v is None else v


def emit_report(report: dict, path: str | Path | None = None, fmt: str = "json") -> str:
    """Render ``report`` and write it to ``path`` (stdout when ``None``); returns the text."""
    text = render(report, fmt)
    if path is None or str(path) == "-":
        print(text, end="")
        return text
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise ReportError(f"cannot write report to {path}: {exc}") from exc
    return text


def read_report(path: str | Path) -> dict | list[dict]:
    """Parse a report written by :func:`emit_report` (JSON document or CSV rows)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return json.loads(text)
    return list(csv.DictReader(io.StringIO(text)))


def error_object(command: str, exc: BaseException) -> dict:
    return {"schema": SCHEMA, "command": command, "ok": False,
            "error": {"type": type(exc).__name__, "message": str(exc)}}
