import json
import subprocess
import sys

import pytest

from exfabric.bench import calc
from exfabric.bench.cli import main, parse_size
from exfabric.bench.report import CSV_COLUMNS, SCHEMA, emit_report, read_report, render
from exfabric.bench.runs import run_exchange_bench, run_scan_bench, run_star_bench

EXPECTED_PRICE = {
    ("sd3", "sort"): 4.221, ("sd3", "join"): 1.612, ("sd3", "star"): 2.400,
    ("llama3_decode_bs1", "sort"): 3.952, ("llama3_decode_bs1", "join"): 1.500,
    ("llama3_decode_bs1", "star"): 2.305,
}


def test_system_speedup_values():
    assert calc.system_speedup(3.2, 0.949, 0.928) == pytest.approx(1.4552, abs=1e-4)
    assert calc.system_speedup(1.7, 0.968, 0.831) == pytest.approx(1.03465, abs=1e-5)
    assert calc.system_speedup(1, 1, 1) == 1
    with pytest.raises(ValueError):
        calc.system_speedup(0, 1, 1)


def test_tax_and_raw_price():
    assert calc.tax(0.95) == pytest.approx(0.05)
    assert calc.tax(1.0) == 0.0
    with pytest.raises(ValueError):
        calc.tax(0.0)
    assert calc.a100_raw_price() == pytest.approx(3.0946, abs=1e-4)


def test_equal_split_price_performance():
    assert calc.price_performance(calc.PriceModel(2.0, 2.0), 1.0) == 0.5


def test_price_table_matches_reference():
    rows = {(r["background"], r["workload"]): r for r in calc.price_table()}
    assert set(rows) == set(EXPECTED_PRICE)
    for key, want in EXPECTED_PRICE.items():
        assert rows[key]["price_performance"] == pytest.approx(want, abs=2e-3), key


def test_parse_size():
    assert parse_size("20MB") == 20_000_000
    assert parse_size("8e9") == 8_000_000_000
    assert parse_size("1KiB") == 1024
    with pytest.raises(Exception):
        parse_size("lots")


def test_csv_header_is_versioned():
    rep = run_scan_bench(n=1 << 12, sels=[1, 64])
    header = render(rep, "csv").splitlines()[0].split(",")
    assert header == ["csv_version"] + CSV_COLUMNS["scan-bench"]


def test_json_round_trip(tmp_path):
    rep = run_star_bench(fact_rows=5000, seed=3)
    path = tmp_path / "r.json"
    emit_report(rep, path)
    assert read_report(path) == json.loads(json.dumps(rep))
    assert rep["schema"] == SCHEMA and rep["ok"]


def test_csv_round_trip(tmp_path):
    rep = run_scan_bench(n=1 << 12, sels=[2])
    path = tmp_path / "r.csv"
    emit_report(rep, path, "csv")
    rows = read_report(path)
    assert len(rows) == len(rep["rows"])
    assert {r["mode"] for r in rows} == {r["mode"] for r in rep["rows"]}


def test_reports_are_deterministic():
    a = render(run_exchange_bench(sizes=[64_000_000], packets=[20_000_000]))
    b = render(run_exchange_bench(sizes=[64_000_000], packets=[20_000_000]))
    assert a == b


def test_cli_success(tmp_path, capsys):
    out = tmp_path / "o.json"
    assert main(["calc-speedup", "--speedup-t", "3.2", "--slowdown-t", "0.949", "--slowdown-f", "0.928",
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text())["summary"]["system_speedup"] == pytest.approx(1.4552, abs=1e-4)


def test_cli_error_exit(capsys):
    code = main(["sort", "--elements", "10", "--chunk", "0", "--payload", "real"])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["ok"] is False and err["command"] == "sort"


def test_cli_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "exfabric.bench.cli", "calc-price", "--format", "csv"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.startswith("csv_version,background")
