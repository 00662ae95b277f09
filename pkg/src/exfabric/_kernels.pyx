# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled device kernels: boundary detection, radix clustering, merge, join."""

import numpy as np
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free, calloc


def find_boundary(const uint64_t[:] hashes, Py_ssize_t n_groups):
    cdef Py_ssize_t n = hashes.shape[0]
    cdef Py_ssize_t i, g
    out = np.empty(n_groups + 1, dtype=np.int64)
    cdef int64_t[:] bounds = out
    for g in range(n_groups):
        bounds[g] = -1
    bounds[n_groups] = n
    for i in range(n):
        if i == 0 or hashes[i] != hashes[i - 1]:
            bounds[<Py_ssize_t>hashes[i]] = i
    # right-to-left fill of empty groups with the next valid position
    for g in range(n_groups - 1, -1, -1):
        if bounds[g] < 0:
            bounds[g] = bounds[g + 1]
    return out


def radix_cluster(const uint64_t[:] keys, const uint64_t[:] vals, int radix_bits):
    cdef Py_ssize_t n = keys.shape[0]
    cdef Py_ssize_t groups = (<Py_ssize_t>1) << radix_bits
    cdef uint64_t mask = (<uint64_t>1 << radix_bits) - 1
    cdef Py_ssize_t i, h, run, c
    okeys = np.empty(n, dtype=np.uint64)
    ovals = np.empty(n, dtype=np.uint64)
    cdef uint64_t[:] ok = okeys
    cdef uint64_t[:] ov = ovals
    cdef int64_t* hist = <int64_t*>calloc(groups, sizeof(int64_t))
    if hist == NULL:
        raise MemoryError()
    try:
        for i in range(n):
            hist[keys[i] & mask] += 1
        run = 0
        for h in range(groups):
            c = hist[h]
            hist[h] = run
            run += c
        for i in range(n):
            h = keys[i] & mask
            ok[hist[h]] = keys[i]
            ov[hist[h]] = vals[i]
            hist[h] += 1
    finally:
        free(hist)
    return okeys, ovals


def merge_sorted(const uint64_t[:] a, const uint64_t[:] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0]
    cdef Py_ssize_t i = 0, j = 0, k = 0
    out = np.empty(na + nb, dtype=np.uint64)
    cdef uint64_t[:] o = out
    while i < na and j < nb:
        if b[j] < a[i]:
            o[k] = b[j]
            j += 1
        else:
            o[k] = a[i]
            i += 1
        k += 1
    while i < na:
        o[k] = a[i]
        i += 1
        k += 1
    while j < nb:
        o[k] = b[j]
        j += 1
        k += 1
    return out


cdef inline uint64_t _mix(uint64_t x) nogil:
    x ^= x >> 33
    x *= <uint64_t>0xff51afd7ed558ccd
    x ^= x >> 33
    return x


def join_sum(const uint64_t[:] a_keys, const uint64_t[:] a_vals,
             const uint64_t[:] b_keys, const uint64_t[:] b_vals, int radix_bits):
    """Per-group build/probe with linear probing; returns (sum mod 2**64, largest group)."""
    cdef Py_ssize_t na = a_keys.shape[0], nb = b_keys.shape[0]
    cdef uint64_t mask = (<uint64_t>1 << radix_bits) - 1
    cdef Py_ssize_t i, j, g, lo, hi, blo, bhi, size, slot, card, max_card = 0
    cdef uint64_t total = 0, k, tmask
    if na == 0:
        return 0, 0
    ak, av = radix_cluster(a_keys, a_vals, radix_bits)
    bk, bv = radix_cluster(b_keys, b_vals, radix_bits)
    cdef const uint64_t[:] cak = ak
    cdef const uint64_t[:] cav = av
    cdef const uint64_t[:] cbk = bk
    cdef const uint64_t[:] cbv = bv
    ha = (ak & np.uint64(mask)) if na else np.empty(0, dtype=np.uint64)
    hb = (bk & np.uint64(mask)) if nb else np.empty(0, dtype=np.uint64)
    cdef int64_t[:] abounds = find_boundary(ha, mask + 1)
    cdef int64_t[:] bbounds = find_boundary(hb, mask + 1)
    cdef Py_ssize_t cap = 16
    cdef int64_t* table = <int64_t*>malloc(cap * sizeof(int64_t))
    if table == NULL:
        raise MemoryError()
    try:
        for g in range(<Py_ssize_t>(mask + 1)):
            lo = abounds[g]
            hi = abounds[g + 1]
            card = hi - lo
            if card > max_card:
                max_card = card
            blo = bbounds[g]
            bhi = bbounds[g + 1]
            if card == 0 or bhi == blo:
                continue
            size = 2
            while size < 2 * card:
                size <<= 1
            if size > cap:
                free(table)
                cap = size
                table = <int64_t*>malloc(cap * sizeof(int64_t))
                if table == NULL:
                    raise MemoryError()
            tmask = size - 1
            for slot in range(size):
                table[slot] = -1
            for i in range(lo, hi):
                slot = _mix(cak[i] >> radix_bits) & tmask
                while table[slot] >= 0:
                    slot = (slot + 1) & tmask
                table[slot] = i
            for j in range(blo, bhi):
                k = cbk[j]
                slot = _mix(k >> radix_bits) & tmask
                while table[slot] >= 0:
                    if cak[table[slot]] == k:
                        total += cav[table[slot]] + cbv[j]
                    slot = (slot + 1) & tmask
    finally:
        free(table)
    return int(total), int(max_card)
