"""Reference implementations of the hot loops (numpy only).

Same signatures and results as the compiled ``_fast`` module.
"""

from __future__ import annotations

import numpy as np

NONE = -1


def insider_first_detection(times, vic_lo, vic_hi, don_lo, don_hi, t0s):
    """Earliest instant >= t0 at which some detector has met both replicas.

    For detector ``d`` the victim's meeting starts are
    ``times[vic_lo[d]:vic_hi[d]]`` and the clone's are
    ``times[don_lo[d]:don_hi[d]]`` (each sorted).  Returns ``(when, who)``:
    the instant (-1 when no detector meets both) and the lowest detector
    index achieving it (-1 likewise).
    """
    t0s = np.asarray(t0s, dtype=np.int64)
    best = np.full(len(t0s), np.iinfo(np.int64).max, dtype=np.int64)
    who = np.full(len(t0s), NONE, dtype=np.int64)
    for d in range(len(vic_lo)):
        v = times[vic_lo[d]:vic_hi[d]]
        c = times[don_lo[d]:don_hi[d]]
        if not len(v) or not len(c):
            continue
        iv = np.searchsorted(v, t0s, side="left")
        ic = np.searchsorted(c, t0s, side="left")
        ok = (iv < len(v)) & (ic < len(c))
        if not ok.any():
            continue
        fv = v[np.minimum(iv, len(v) - 1)]
        fc = c[np.minimum(ic, len(c) - 1)]
        both = np.maximum(fv, fc)
        better = ok & (both < best)
        best[better] = both[better]
        who[better] = d
    best[best == np.iinfo(np.int64).max] = NONE
    return best, who


def fresh_count_segments(times, offsets, windows, issue, seed_expiry, t_from, t_end):
    """Piecewise-constant number of fresh signed updates on [t_from, t_end).

    Friend ``f`` holds a seed update fresh on [issue, seed_expiry) until its
    first refresh; refresh ``r`` keeps it fresh on [r, r + windows[f]) until
    the next refresh replaces it.  Returns ``(starts, counts)``: the count is
    ``counts[s]`` on [starts[s], starts[s+1]) with the last segment ending at
    ``t_end``.
    """
    pts, deltas = [], []
    for f in range(len(offsets) - 1):
        r = times[offsets[f]:offsets[f + 1]]
        w = int(windows[f])
        first = int(r[0]) if len(r) else None
        seed_end = int(seed_expiry) if first is None else min(int(seed_expiry), first)
        if seed_end > issue:
            pts += [int(issue), seed_end]
            deltas += [1, -1]
        for n in range(len(r)):
            s = int(r[n])
            e = s + w
            if n + 1 < len(r):
                e = min(e, int(r[n + 1]))
            if e > s:
                pts += [s, e]
                deltas += [1, -1]
    if t_end <= t_from:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    pts = np.asarray(pts, dtype=np.int64)
    deltas = np.asarray(deltas, dtype=np.int64)
    order = np.argsort(pts, kind="stable")
    pts, deltas = pts[order], deltas[order]
    uniq, first_idx = np.unique(pts, return_index=True)
    level = np.cumsum(deltas)
    last_idx = np.append(first_idx[1:], len(pts)) - 1
    after = level[last_idx] if len(pts) else np.zeros(0, dtype=np.int64)
    # count in force at t_from
    k = np.searchsorted(uniq, t_from, side="right") - 1
    c0 = int(after[k]) if k >= 0 else 0
    inside = (uniq > t_from) & (uniq < t_end)
    starts = np.concatenate(([t_from], uniq[inside])).astype(np.int64)
    counts = np.concatenate(([c0], after[inside])).astype(np.int64)
    # collapse repeats
    keep = np.ones(len(counts), dtype=bool)
    keep[1:] = counts[1:] != counts[:-1]
    return starts[keep], counts[keep]


def outsider_durations(times, offsets, windows, seed_expiry, t0s, k):
    """Time from each t0 until fewer than ``k`` updates remain fresh.

    Updates are frozen at their state at t0 (latest refresh <= t0, or the
    seed when there is none).  Zero when the certificate is already invalid.
    """
    t0s = np.asarray(t0s, dtype=np.int64)
    n_f = len(offsets) - 1
    out = np.zeros(len(t0s), dtype=np.int64)
    if k <= 0:
        raise ValueError("k must be positive")
    if n_f < k:
        return out
    exp = np.empty((n_f, len(t0s)), dtype=np.int64)
    for f in range(n_f):
        r = times[offsets[f]:offsets[f + 1]]
        idx = np.searchsorted(r, t0s, side="right") - 1
        latest = r[np.maximum(idx, 0)] + int(windows[f]) if len(r) else np.zeros(len(t0s), np.int64)
        exp[f] = np.where(idx >= 0, latest, int(seed_expiry)) if len(r) else int(seed_expiry)
    kth = -np.sort(-exp, axis=0)[k - 1]
    return np.maximum(kth - t0s, 0)
