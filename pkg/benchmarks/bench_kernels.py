"""Compare the compiled kernels with the NumPy fallback.

    python benchmarks/bench_kernels.py [--sizes 100000,1000000] [--repeat 3] [--json out.json]

Both backends are checked for identical results before timing.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from exfabric import kernels


def _best(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def workloads(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    keys = rng.permutation(n).astype(np.uint64)
    vals = rng.integers(0, 1 << 32, n, dtype=np.uint64)
    probe = keys[rng.integers(0, n, n)]
    bits = 8
    hashes = np.sort(keys & np.uint64((1 << bits) - 1))
    a = np.sort(rng.integers(0, 1 << 63, n, dtype=np.uint64))
    b = np.sort(rng.integers(0, 1 << 63, n, dtype=np.uint64))
    return {
        "find_boundary": lambda k: k.find_boundary(hashes, 1 << bits),
        "radix_cluster": lambda k: k.radix_cluster(keys, vals, bits),
        "merge_sorted": lambda k: k.merge_sorted(a, b),
        "join_sum": lambda k: k.join_sum(keys, vals, probe, vals, bits),
    }


def _same(x, y) -> bool:
    if isinstance(x, tuple):
        return all(_same(p, q) for p, q in zip(x, y))
    if isinstance(x, np.ndarray):
        return bool(np.array_equal(x, y))
    return x == y


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="100000,1000000")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    names = sorted(kernels.BACKENDS)
    if "cython" not in names:
        print("compiled kernels not built; only the NumPy backend is available")
    rows = []
    for n in (int(s) for s in args.sizes.split(",")):
        for kname, fn in workloads(n).items():
            outs = {b: fn(kernels.backend(b)) for b in names}
            ref = outs[names[0]]
            if not all(_same(ref, o) for o in outs.values()):
                raise SystemExit(f"backends disagree on {kname} at n={n}")
            row = {"kernel": kname, "n": n}
            for b in names:
                row[f"{b}_s"] = _best(lambda: fn(kernels.backend(b)), args.repeat)
            if "cython" in names:
                row["speedup"] = row["python_s"] / row["cython_s"]
            rows.append(row)
    header = ["kernel", "n"] + [f"{b}_s" for b in names] + (["speedup"] if "cython" in names else [])
    print("  ".join(f"{h:>14}" for h in header))
    for r in rows:
        print("  ".join(f"{r[h]:>14.6f}" if isinstance(r[h], float) else f"{r[h]:>14}" for h in header))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
