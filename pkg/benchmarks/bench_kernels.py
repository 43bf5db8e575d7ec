"""Compare the compiled and numpy kernel backends on representative inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Inputs mimic the default 1500-node synthetic trace: ~30 detectors per
victim with a few dozen meetings each, friend sets of ~20 with ~40 refreshes
apiece, and one attack instant per evaluation day.  Prints one line per
kernel with the best wall time of each backend, the speedup, and whether the
outputs agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from clonemarks.kernels import _pure

try:
    from clonemarks.kernels import _fast
except ImportError:  # extension not built
    _fast = None

DAY = 86400


def _segments(rng, n_groups, per_group, span):
    chunks = [np.sort(rng.integers(0, span, size=rng.integers(1, 2 * per_group)))
              for _ in range(n_groups)]
    offsets = np.concatenate(([0], np.cumsum([len(c) for c in chunks]))).astype(np.int64)
    return np.concatenate(chunks).astype(np.int64), offsets


def insider_inputs(rng, scale):
    n_det = int(30 * scale) or 1
    span = 42 * DAY
    times, off = _segments(rng, 2 * n_det, 40, span)
    vic_lo, vic_hi = off[:n_det], off[1:n_det + 1]
    don_lo, don_hi = off[n_det:2 * n_det], off[n_det + 1:]
    t0s = np.arange(0, span, DAY, dtype=np.int64)
    return times, vic_lo, vic_hi, don_lo, don_hi, t0s


def timeline_inputs(rng, scale):
    n_f = int(20 * scale) or 1
    span = 42 * DAY
    times, off = _segments(rng, n_f, 40, span)
    windows = rng.integers(DAY // 2, 3 * DAY, size=n_f).astype(np.int64)
    return times, off, windows, span


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def run(repeat: int = 5, scale: float = 1.0, calls: int = 200, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    ins = insider_inputs(rng, scale)
    times, off, win, span = timeline_inputs(rng, scale)
    t0s = np.arange(0, span, DAY, dtype=np.int64)
    cases = {
        "insider_first_detection": lambda m: m.insider_first_detection(*ins),
        "fresh_count_segments": lambda m: m.fresh_count_segments(
            times, off, win, 0, 2 * DAY, DAY, span),
        "outsider_durations": lambda m: m.outsider_durations(
            times, off, win, 2 * DAY, t0s, 3),
    }
    rows = []
    for name, case in cases.items():
        # each timing covers `calls` invocations, the size of a small experiment
        tp, op = best_of(lambda: [case(_pure) for _ in range(calls)][-1], repeat)
        row = {"kernel": name, "pure_s": tp, "fast_s": None, "speedup": None, "agree": None}
        if _fast is not None:
            tf, of = best_of(lambda: [case(_fast) for _ in range(calls)][-1], repeat)
            row.update(fast_s=tf, speedup=tp / tf if tf else float("inf"), agree=same(op, of))
        rows.append(row)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--calls", type=int, default=200)
    args = ap.parse_args(argv)
    if _fast is None:
        print("compiled backend not available; timing the numpy backend only")
    print(f"{'kernel':26s} {'pure [s]':>10s} {'cython [s]':>11s} {'speedup':>8s}  agree")
    for r in run(args.repeat, args.scale, args.calls):
        fast = "-" if r["fast_s"] is None else f"{r['fast_s']:.4f}"
        sp = "-" if r["speedup"] is None else f"{r['speedup']:.1f}x"
        print(f"{r['kernel']:26s} {r['pure_s']:10.4f} {fast:>11s} {sp:>8s}  {r['agree']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
