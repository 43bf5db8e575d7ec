import math

import pytest

from clonemarks.report import ccdf, emit_report, per_node_average, write_reports
from clonemarks.simulator import (AttackKind, AttackScenario, DetectionReport, Outcome)
from clonemarks.trace import DAY

from conftest import N


def rep(victim, latency, t0=0):
    sc = AttackScenario(N(victim), N("d"), t0, AttackKind.INSIDER)
    if latency is None:
        return DetectionReport(sc, Outcome.NOT_DETECTED)
    return DetectionReport(sc, Outcome.DETECTED_BY_MARKS, latency)


def test_empty_report_is_header_only(tmp_path):
    p = tmp_path / "r.csv"
    write_reports([], p)
    assert p.read_text() == "victim,donor,kind,t0,outcome,latency_s,latency_days\n"


def test_ccdf_at_zero_counts_everyone():
    vals = [0.0, 0.3, 1.2, math.inf]
    assert ccdf(vals)[0] == (0.0, 4)


def test_ccdf_monotone_and_counts_infinity():
    pts = ccdf([0.1, 0.5, 0.5, 2.0, math.inf], step=0.25)
    counts = [n for _, n in pts]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert counts[-1] == 1                          # only the never-detected node remains
    assert dict(pts)[0.5] == 4 and dict(pts)[0.75] == 2


def test_per_node_average():
    avg = per_node_average([rep("a", DAY), rep("a", 3 * DAY), rep("a", None), rep("b", None)])
    assert avg[N("a")] == (3, 2, 2.0)
    assert avg[N("b")] == (1, 0, math.inf)


def test_emit_report_files(tmp_path):
    paths = emit_report([rep("a", DAY // 2), rep("b", None)], tmp_path / "out", "insider")
    assert paths["reports"].read_text().splitlines()[1] == "a,d,insider,0,detected_by_marks,43200,0.500000"
    assert paths["per_node"].read_text().splitlines()[1:] == ["a,1,1,0.500000", "b,1,0,inf"]
    assert paths["ccdf"].read_text().splitlines()[:2] == ["x_days,node_count", "0,2"]


def test_unsupported_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path, "x", fmt="parquet")


def test_unwritable_path_raises(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        write_reports([], blocker / "sub" / "r.csv")
