"""NumPy implementations of the device kernels (fallback when the extension is absent)."""

import numpy as np

U64 = np.uint64


def find_boundary(hashes, n_groups):
    hashes = np.asarray(hashes, dtype=U64)
    n = hashes.size
    bounds = np.full(n_groups + 1, -1, dtype=np.int64)
    bounds[n_groups] = n
    if n:
        starts = np.flatnonzero(np.concatenate(([True], hashes[1:] != hashes[:-1])))
        bounds[hashes[starts].astype(np.int64)] = starts
    # placeholders take the next valid boundary to their right
    filled = np.where(bounds < 0, np.iinfo(np.int64).max, bounds)
    bounds = np.minimum.accumulate(filled[::-1])[::-1].astype(np.int64)
    return bounds


def radix_cluster(keys, vals, radix_bits):
    keys = np.asarray(keys, dtype=U64)
    vals = np.asarray(vals, dtype=U64)
    mask = U64((1 << radix_bits) - 1)
    order = np.argsort(keys & mask, kind="stable")
    return keys[order], vals[order]


def merge_sorted(a, b):
    a = np.asarray(a, dtype=U64)
    b = np.asarray(b, dtype=U64)
    out = np.empty(a.size + b.size, dtype=U64)
    # ties keep elements of ``a`` first
    pos_a = np.arange(a.size) + np.searchsorted(b, a, side="left")
    pos_b = np.arange(b.size) + np.searchsorted(a, b, side="right")
    out[pos_a] = a
    out[pos_b] = b
    return out


def join_sum(a_keys, a_vals, b_keys, b_vals, radix_bits):
    """Sum of a.val + b.val over equal keys (mod 2**64) and the largest group in ``a``."""
    a_keys = np.asarray(a_keys, dtype=U64)
    a_vals = np.asarray(a_vals, dtype=U64)
    b_keys = np.asarray(b_keys, dtype=U64)
    b_vals = np.asarray(b_vals, dtype=U64)
    if a_keys.size == 0 or b_keys.size == 0:
        max_group = 0
        if a_keys.size:
            max_group = int(np.unique(a_keys & U64((1 << radix_bits) - 1), return_counts=True)[1].max())
        return 0, max_group
    order = np.argsort(a_keys, kind="stable")
    sk, sv = a_keys[order], a_vals[order]
    lo = np.searchsorted(sk, b_keys, side="left")
    hi = np.searchsorted(sk, b_keys, side="right")
    # uint64 arithmetic wraps, which is exactly the mod 2**64 sum we want
    with np.errstate(over="ignore"):
        prefix = np.concatenate(([U64(0)], np.cumsum(sv, dtype=U64)))
        a_part = np.sum(prefix[hi] - prefix[lo], dtype=U64)
        b_part = np.sum(b_vals * (hi - lo).astype(U64), dtype=U64)
        total = a_part + b_part
    _, counts = np.unique(a_keys & U64((1 << radix_bits) - 1), return_counts=True)
    return int(total), int(counts.max())
