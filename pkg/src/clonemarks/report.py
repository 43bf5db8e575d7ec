"""CSV outputs: per-scenario rows, per-node averages and CCDF curves."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .simulator import DetectionReport, FalsePositives, Outcome
from .trace import DAY

REPORT_HEADER = ["victim", "donor", "kind", "t0", "outcome", "latency_s", "latency_days"]
NODE_HEADER = ["node", "scenarios", "resolved", "avg_days"]
CCDF_HEADER = ["x_days", "node_count"]


def _fmt(x: float | None) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return f"{x:.6f}"


def per_node_average(reports: Iterable[DetectionReport]) -> dict:
    """node -> (scenarios, resolved, mean latency in days or inf if none resolved)."""
    acc: dict = defaultdict(lambda: [0, 0, 0])
    for r in reports:
        row = acc[r.scenario.victim]
        row[0] += 1
        if r.outcome is not Outcome.NOT_DETECTED and r.latency is not None:
            row[1] += 1
            row[2] += r.latency
    return {node: (n, k, (s / k / DAY) if k else math.inf)
            for node, (n, k, s) in acc.items()}


def ccdf(values: Iterable[float], step: float = 0.25,
         x_max: float | None = None) -> list[tuple[float, int]]:
    """Number of values >= x on a grid starting at 0.

    Infinite values (never detected) are counted at every x.
    """
    vals = np.asarray(sorted(values), dtype=float)
    finite = vals[np.isfinite(vals)]
    if x_max is None:
        x_max = math.ceil(finite.max() / step) * step + step if len(finite) else step
    n_steps = int(round(x_max / step))
    out = []
    for s in range(n_steps + 1):
        x = round(s * step, 10)
        out.append((x, int(len(vals) - np.searchsorted(vals, x, side="left"))))
    return out


def write_reports(reports: Iterable[DetectionReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in reports:
            sc = r.scenario
            w.writerow([sc.victim.id, sc.mobility_donor.id if sc.mobility_donor else "",
                        sc.kind.value, sc.t0, r.outcome.value,
                        "" if r.latency is None else r.latency, _fmt(r.latency_days)])


def write_per_node(averages: Mapping, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_HEADER)
        for node in sorted(averages):
            n, k, avg = averages[node]
            w.writerow([node.id, n, k, _fmt(float(avg))])


def write_ccdf(points: Iterable[tuple[float, int]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CCDF_HEADER)
        for x, n in points:
            w.writerow([f"{x:g}", n])


def write_false_positives(fps: Mapping, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "count", "max_length_days"])
        for node in sorted(fps):
            fp: FalsePositives = fps[node]
            w.writerow([node.id, fp.count, _fmt(fp.max_length / DAY)])


def emit_report(reports: list[DetectionReport], out_dir, prefix: str,
                fmt: str = "csv", step: float = 0.25) -> dict[str, Path]:
    """Write ``<prefix>_reports.csv``, ``<prefix>_per_node.csv`` and ``<prefix>_ccdf.csv``."""
    if fmt != "csv":
        raise ValueError(f"unsupported report format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "reports": out_dir / f"{prefix}_reports.csv",
        "per_node": out_dir / f"{prefix}_per_node.csv",
        "ccdf": out_dir / f"{prefix}_ccdf.csv",
    }
    write_reports(reports, paths["reports"])
    averages = per_node_average(reports)
    write_per_node(averages, paths["per_node"])
    write_ccdf(ccdf([a for _, _, a in averages.values()], step), paths["ccdf"])
    return paths
