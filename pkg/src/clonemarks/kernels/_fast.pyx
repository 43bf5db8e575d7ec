# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the functions in ``_pure``."""

import numpy as np
from libc.stdint cimport int64_t

cdef int64_t INT64_MAX = 9223372036854775807


cdef inline Py_ssize_t lower_bound(const int64_t[::1] a, Py_ssize_t lo, Py_ssize_t hi,
                                   int64_t x) noexcept nogil:
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t upper_bound(const int64_t[::1] a, Py_ssize_t lo, Py_ssize_t hi,
                                   int64_t x) noexcept nogil:
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def insider_first_detection(times, vic_lo, vic_hi, don_lo, don_hi, t0s):
    cdef const int64_t[::1] tv = np.ascontiguousarray(times, dtype=np.int64)
    cdef const int64_t[::1] vl = np.ascontiguousarray(vic_lo, dtype=np.int64)
    cdef const int64_t[::1] vh = np.ascontiguousarray(vic_hi, dtype=np.int64)
    cdef const int64_t[::1] dl = np.ascontiguousarray(don_lo, dtype=np.int64)
    cdef const int64_t[::1] dh = np.ascontiguousarray(don_hi, dtype=np.int64)
    cdef const int64_t[::1] ts = np.ascontiguousarray(t0s, dtype=np.int64)
    out = np.empty(ts.shape[0], dtype=np.int64)
    who_arr = np.empty(ts.shape[0], dtype=np.int64)
    cdef int64_t[::1] res = out
    cdef int64_t[::1] who = who_arr
    cdef Py_ssize_t q, d, iv, ic, arg
    cdef int64_t t0, best, fv, fc, both
    with nogil:
        for q in range(ts.shape[0]):
            t0 = ts[q]
            best = INT64_MAX
            arg = -1
            for d in range(vl.shape[0]):
                if vh[d] <= vl[d] or dh[d] <= dl[d]:
                    continue
                iv = lower_bound(tv, vl[d], vh[d], t0)
                if iv == vh[d]:
                    continue
                ic = lower_bound(tv, dl[d], dh[d], t0)
                if ic == dh[d]:
                    continue
                fv = tv[iv]
                fc = tv[ic]
                both = fv if fv > fc else fc
                if both < best:
                    best = both
                    arg = d
            res[q] = -1 if best == INT64_MAX else best
            who[q] = arg
    return out, who_arr


def fresh_count_segments(times, offsets, windows, int64_t issue, int64_t seed_expiry,
                         int64_t t_from, int64_t t_end):
    cdef const int64_t[::1] tv = np.ascontiguousarray(times, dtype=np.int64)
    cdef const int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const int64_t[::1] win = np.ascontiguousarray(windows, dtype=np.int64)
    cdef Py_ssize_t n_f = off.shape[0] - 1
    cdef Py_ssize_t cap = 2 * (tv.shape[0] + n_f) + 2
    pts_arr = np.empty(cap, dtype=np.int64)
    del_arr = np.empty(cap, dtype=np.int64)
    cdef int64_t[::1] pts = pts_arr
    cdef int64_t[::1] dl = del_arr
    cdef Py_ssize_t n = 0, f, r, lo, hi
    cdef int64_t seed_end, s, e
    for f in range(n_f):
        lo = off[f]
        hi = off[f + 1]
        seed_end = seed_expiry
        if hi > lo and tv[lo] < seed_end:
            seed_end = tv[lo]
        if seed_end > issue:
            pts[n] = issue; dl[n] = 1; n += 1
            pts[n] = seed_end; dl[n] = -1; n += 1
        for r in range(lo, hi):
            s = tv[r]
            e = s + win[f]
            if r + 1 < hi and tv[r + 1] < e:
                e = tv[r + 1]
            if e > s:
                pts[n] = s; dl[n] = 1; n += 1
                pts[n] = e; dl[n] = -1; n += 1
    if t_end <= t_from:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    order = np.argsort(pts_arr[:n], kind="stable")
    cdef const int64_t[::1] sp = np.ascontiguousarray(pts_arr[:n][order])
    cdef const int64_t[::1] sd = np.ascontiguousarray(del_arr[:n][order])
    starts_arr = np.empty(n + 1, dtype=np.int64)
    counts_arr = np.empty(n + 1, dtype=np.int64)
    cdef int64_t[::1] st = starts_arr
    cdef int64_t[::1] ct = counts_arr
    cdef Py_ssize_t i = 0, m = 0
    cdef int64_t level = 0, t
    with nogil:
        # level in force at t_from
        while i < n and sp[i] <= t_from:
            level += sd[i]
            i += 1
        st[0] = t_from
        ct[0] = level
        m = 1
        while i < n and sp[i] < t_end:
            t = sp[i]
            while i < n and sp[i] == t:
                level += sd[i]
                i += 1
            if level != ct[m - 1]:
                st[m] = t
                ct[m] = level
                m += 1
    return starts_arr[:m].copy(), counts_arr[:m].copy()


def outsider_durations(times, offsets, windows, int64_t seed_expiry, t0s, Py_ssize_t k):
    if k <= 0:
        raise ValueError("k must be positive")
    cdef const int64_t[::1] tv = np.ascontiguousarray(times, dtype=np.int64)
    cdef const int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const int64_t[::1] win = np.ascontiguousarray(windows, dtype=np.int64)
    cdef const int64_t[::1] ts = np.ascontiguousarray(t0s, dtype=np.int64)
    cdef Py_ssize_t n_f = off.shape[0] - 1
    out = np.zeros(ts.shape[0], dtype=np.int64)
    if n_f < k:
        return out
    cdef int64_t[::1] res = out
    buf_arr = np.empty(n_f, dtype=np.int64)
    cdef int64_t[::1] buf = buf_arr
    cdef Py_ssize_t q, f, idx, a, b
    cdef int64_t t0, x, kth
    with nogil:
        for q in range(ts.shape[0]):
            t0 = ts[q]
            for f in range(n_f):
                idx = upper_bound(tv, off[f], off[f + 1], t0)
                if idx == off[f]:
                    buf[f] = seed_expiry
                else:
                    buf[f] = tv[idx - 1] + win[f]
            # insertion sort, descending (friend sets are small)
            for a in range(1, n_f):
                x = buf[a]
                b = a
                while b > 0 and buf[b - 1] < x:
                    buf[b] = buf[b - 1]
                    b -= 1
                buf[b] = x
            kth = buf[k - 1]
            res[q] = kth - t0 if kth > t0 else 0
    return out
