"""Command-line entry point: ``exfabric <command> [options]``.

Exit status is 0 on success, 1 on errors (a JSON error object goes to
stderr) and 3 when a run finished but one of its built-in checks failed.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from ..exchange import DEFAULT_PACKET
from ..executor import CostModel
from . import calc, runs
from .report import SCHEMA, emit_report, error_object

_UNITS = {"": 1, "B": 1, "KB": 10**3, "MB": 10**6, "GB": 10**9, "KIB": 2**10, "MIB": 2**20, "GIB": 2**30}


def parse_size(text: str) -> int:
    """``"20MB"`` -> 20_000_000; plain numbers such as ``8e9`` are accepted too."""
    m = re.fullmatch(r"\s*([0-9.eE+]+)\s*([A-Za-z]*)\s*", str(text))
    if not m or m.group(2).upper() not in _UNITS:
        raise argparse.ArgumentTypeError(f"not a size: {text!r}")
    return int(float(m.group(1)) * _UNITS[m.group(2).upper()])


def _list(conv):
    def parse(text: str):
        return [conv(x) for x in str(text).split(",") if x.strip()]
    return parse


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="JSON file with a 'topology' object and per-command sections")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--links", type=_list(int), default=argparse.SUPPRESS, help="comma-separated link counts")
    g.add_argument("--packet-bytes", type=parse_size, default=argparse.SUPPRESS)
    g.add_argument("--payload", choices=("real", "phantom"), default=argparse.SUPPRESS)
    g.add_argument("--out", default=argparse.SUPPRESS, help="output path ('-' for stdout)")
    g.add_argument("--format", choices=("json", "csv"), default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="exfabric", parents=[common],
                                     description="Virtual-time multi-link IO experiments and calculators.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exchange-bench", parents=[common], help="bidirectional transfer sweep")
    p.add_argument("--sizes", type=_list(parse_size), default=argparse.SUPPRESS, help="bytes per direction")
    p.add_argument("--packets", type=_list(parse_size), default=argparse.SUPPRESS)
    p.add_argument("--schedulers", type=_list(str), default=argparse.SUPPRESS)

    p = sub.add_parser("sort", parents=[common], help="out-of-core sort")
    p.add_argument("--elements", type=parse_size, default=argparse.SUPPRESS)
    p.add_argument("--chunk", type=parse_size, default=argparse.SUPPRESS, help="elements per chunk")

    p = sub.add_parser("join", parents=[common], help="radix hash join")
    p.add_argument("--rows-a", type=parse_size, default=argparse.SUPPRESS)
    p.add_argument("--rows-b", type=parse_size, default=argparse.SUPPRESS)
    p.add_argument("--chunk-rows", type=parse_size, default=argparse.SUPPRESS)
    p.add_argument("--radix-bits", type=int, default=argparse.SUPPRESS)
    p.add_argument("--buffer-rows", type=parse_size, default=argparse.SUPPRESS)

    p = sub.add_parser("scan-bench", parents=[common], help="exchange vs zero-copy strided scan")
    p.add_argument("--n", type=parse_size, default=argparse.SUPPRESS, help="column length")
    p.add_argument("--sels", type=_list(int), default=argparse.SUPPRESS)
    p.add_argument("--element-size", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("star", parents=[common], help="filter-join-aggregate star query")
    p.add_argument("--fact-rows", type=parse_size, default=argparse.SUPPRESS)
    p.add_argument("--selectivities", type=_list(float), default=argparse.SUPPRESS)
    p.add_argument("--chunk-rows", type=parse_size, default=argparse.SUPPRESS)

    p = sub.add_parser("calc-speedup", parents=[common], help="whole-machine speedup")
    p.add_argument("--speedup-t", type=float, required=True)
    p.add_argument("--slowdown-t", type=float, required=True, help="retained throughput, e.g. 0.949")
    p.add_argument("--slowdown-f", type=float, required=True)

    p = sub.add_parser("calc-price", parents=[common], help="price performance table")
    p.add_argument("--defaults", type=Path, default=None, help="alternative defaults JSON")
    return parser


# argument name -> runner keyword, per command
_KEYS = {
    "exchange-bench": {"sizes": "sizes", "packets": "packets", "schedulers": "schedulers", "links": "links",
                       "payload": "payload", "seed": "seed"},
    "sort": {"elements": "elements", "chunk": "chunk", "links": "links", "payload": "payload", "seed": "seed",
             "packet_bytes": "packet"},
    "join": {"rows_a": "rows_a", "rows_b": "rows_b", "chunk_rows": "chunk_rows", "radix_bits": "radix_bits",
             "buffer_rows": "buffer_rows", "links": "links", "payload": "payload", "seed": "seed",
             "packet_bytes": "packet"},
    "scan-bench": {"n": "n", "sels": "sels", "element_size": "element_size", "payload": "payload", "seed": "seed"},
    "star": {"fact_rows": "fact_rows", "selectivities": "selectivities", "chunk_rows": "chunk_rows", "seed": "seed"},
}


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return cfg


def run_command(args: argparse.Namespace) -> dict:
    cfg = _load_config(getattr(args, "config", None))
    cmd = args.command
    if cmd == "calc-speedup":
        value = calc.system_speedup(args.speedup_t, args.slowdown_t, args.slowdown_f)
        row = {"speedup_t": args.speedup_t, "slowdown_t": args.slowdown_t, "slowdown_f": args.slowdown_f,
               "system_speedup": value}
        return {"schema": SCHEMA, "command": cmd, "ok": True, "config": {}, "rows": [row],
                "summary": {"system_speedup": value}, "checks": {}}
    if cmd == "calc-price":
        defaults = calc.load_defaults(args.defaults or cfg.get("calc-price", {}).get("defaults"))
        rows = calc.price_table(defaults)
        inst = defaults["instances"]
        c_raw = calc.a100_raw_price(inst["gpu_host_hourly"], inst["cpu_host_hourly"], inst["gpus_per_host"])
        return {"schema": SCHEMA, "command": cmd, "ok": True, "config": {"defaults": defaults}, "rows": rows,
                "summary": {"c_raw": c_raw, "c_cpu": inst["cpu_host_hourly"]}, "checks": {}}

    kw = dict(cfg.get(cmd, {}))
    for arg, key in _KEYS[cmd].items():
        if hasattr(args, arg):
            kw[key] = getattr(args, arg)
    topology = cfg.get("topology")
    if cmd == "exchange-bench":
        if hasattr(args, "packet_bytes") and "packets" not in kw:
            kw["packets"] = [args.packet_bytes]
        return runs.run_exchange_bench(topology=topology, **kw)
    if cmd in ("sort", "join"):
        if "cost" in cfg:
            kw["cost"] = CostModel(**cfg["cost"])
        kw.setdefault("packet", DEFAULT_PACKET)
        fn = runs.run_sort_bench if cmd == "sort" else runs.run_join_bench
        return fn(topology=topology, **kw)
    if cmd == "scan-bench":
        return runs.run_scan_bench(topology=topology, **kw)
    if cmd == "star":
        return runs.run_star_bench(topology=topology, **kw)
    raise ValueError(f"unknown command {cmd!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = getattr(args, "out", None)
    fmt = getattr(args, "format", "json")
    try:
        report = run_command(args)
        emit_report(report, out, fmt)
    except Exception as exc:  # reported as data; the exit status carries the failure
        print(json.dumps(error_object(args.command, exc), sort_keys=True), file=sys.stderr)
        return 1
    return 0 if report.get("ok", True) else 3


if __name__ == "__main__":
    sys.exit(main())
