"""System-speedup and price-performance arithmetic.

Slowdowns are given as retained-throughput factors ``1 - fraction`` (0.949
means the co-located job runs 5.1% slower).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


def system_speedup(speedup_t: float, slowdown_t: float, slowdown_f: float, forwarders: int = 3) -> float:
    """Whole-machine speedup when the target gains ``speedup_t`` and every device gives up some throughput."""
    for name, v in (("speedup_t", speedup_t), ("slowdown_t", slowdown_t), ("slowdown_f", slowdown_f)):
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")
    return (speedup_t * slowdown_t + forwarders * slowdown_f) / (forwarders + 1)


def tax(retained: float) -> float:
    """Price surcharge for a device keeping ``retained`` of its throughput: 1 - 1/slowdown ratio."""
    if not 0 < retained <= 1:
        raise ValueError(f"retained throughput must lie in (0, 1], got {retained}")
    ratio = 1.0 / retained
    return 1.0 - 1.0 / ratio


def a100_raw_price(gpu_host_hourly: float = 32.773, cpu_host_hourly: float = 8.016, gpus: int = 8) -> float:
    """Hourly price of one GPU: the GPU host's premium over the CPU host, per GPU."""
    if gpus <= 0:
        raise ValueError("gpus must be positive")
    return (gpu_host_hourly - cpu_host_hourly) / gpus


@dataclass(frozen=True)
class PriceModel:
    c_raw: float
    c_cpu: float
    slowdown_t: float = 1.0
    slowdown_f: float = 1.0
    forwarders: int = 3

    def __post_init__(self):
        if self.c_raw <= 0 or self.c_cpu <= 0:
            raise ValueError("prices must be positive")
        tax(self.slowdown_t)
        tax(self.slowdown_f)

    @property
    def tax_t(self) -> float:
        return tax(self.slowdown_t)

    @property
    def tax_f(self) -> float:
        return tax(self.slowdown_f)

    @property
    def accelerated_price(self) -> float:
        return self.c_raw * (1.0 + self.tax_t + self.forwarders * self.tax_f)


def price_performance(p: PriceModel, speedup: float) -> float:
    """Speedup over the CPU baseline scaled by the CPU's share of the combined price."""
    if speedup <= 0:
        raise ValueError("speedup must be positive")
    return p.c_cpu / (p.accelerated_price + p.c_cpu) * speedup


def load_defaults(path: str | Path | None = None) -> dict:
    if path is not None:
        return json.loads(Path(path).read_text())
    return json.loads(resources.files("exfabric.bench").joinpath("defaults.json").read_text())


def price_table(defaults: dict | None = None) -> list[dict]:
    """Price performance for every background/workload pair in the defaults."""
    d = defaults or load_defaults()
    inst = d["instances"]
    c_raw = a100_raw_price(inst["gpu_host_hourly"], inst["cpu_host_hourly"], inst["gpus_per_host"])
    rows = []
    for background, per in d["slowdown_fraction"].items():
        for workload, s in per.items():
            model = PriceModel(c_raw, inst["cpu_host_hourly"], 1.0 - s["target"], 1.0 - s["forward"])
            speedup = d["speedup_over_cpu"][workload]["value"]
            rows.append({
                "background": background,
                "workload": workload,
                "speedup": speedup,
                "tax_t": round(model.tax_t, 12),
                "tax_f": round(model.tax_f, 12),
                "price_performance": price_performance(model, speedup),
                "approximate": bool(s.get("approximate", False)),
            })
    return rows
