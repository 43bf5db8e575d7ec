"""Contact traces: data model, CSV ingestion, filtering, splitting and statistics.

Times are integer seconds.  Day and week buckets are local to the trace:
bucket 0 starts at ``t_begin``.
"""

from __future__ import annotations

import csv
import gzip
import io
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .identity import EntityId, EntityKind

log = logging.getLogger(__name__)

DAY = 86_400
WEEK = 7 * DAY

CONTACT_HEADER = ["a", "b", "start", "end"]
CONTACT_HEADER_KINDS = CONTACT_HEADER + ["a_kind", "b_kind"]
AP_HEADER = ["node", "ap", "start", "end"]


class TraceFormatError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class UndefinedStabilityError(ValueError):
    pass


@dataclass(frozen=True)
class ContactEvent:
    a: EntityId
    b: EntityId
    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"contact ends before it starts: {self}")
        if self.a == self.b:
            raise ValueError(f"self-contact: {self.a}")

    @classmethod
    def make(cls, a: EntityId, b: EntityId, start: int, end: int) -> "ContactEvent":
        """Build with canonical endpoint order (a < b)."""
        if b < a:
            a, b = b, a
        return cls(a, b, int(start), int(end))

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class ApAssociation:
    node: EntityId
    ap: EntityId
    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"association ends before it starts: {self}")


class ContactTrace:
    """Immutable, time-sorted set of pairwise contacts.

    Storage is columnar: ``a``/``b`` index into ``entities`` (sorted, so
    ``a < b`` is the canonical order) and ``start``/``end`` are int64.
    """

    __slots__ = ("entities", "a", "b", "start", "end", "t_begin", "t_end",
                 "_index", "_events")

    def __init__(self, entities: Sequence[EntityId], a, b, start, end,
                 span: tuple[int, int] | None = None, *, _sorted: bool = False):
        ents = tuple(entities)
        if list(ents) != sorted(ents):
            raise ValueError("entities must be sorted")
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        start = np.asarray(start, dtype=np.int64)
        end = np.asarray(end, dtype=np.int64)
        if not (len(a) == len(b) == len(start) == len(end)):
            raise ValueError("column length mismatch")
        if len(a):
            if np.any(a == b):
                raise ValueError("self-contact in trace")
            if np.any(start > end):
                raise ValueError("contact ends before it starts")
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            a, b = lo, hi
            if not _sorted:
                order = np.lexsort((b, a, end, start))
                a, b, start, end = a[order], b[order], start[order], end[order]
        if span is None:
            span = (int(start.min()), int(end.max())) if len(a) else (0, 0)
        t_begin, t_end = int(span[0]), int(span[1])
        if t_begin > t_end:
            raise ValueError("span begins after it ends")
        if len(a) and (start.min() < t_begin or end.max() > t_end):
            raise ValueError("event outside trace span")
        for arr in (a, b, start, end):
            arr.setflags(write=False)
        self.entities = ents
        self.a, self.b, self.start, self.end = a, b, start, end
        self.t_begin, self.t_end = t_begin, t_end
        self._index = None
        self._events = None

    # -- construction -------------------------------------------------------

    @classmethod
    def from_events(cls, events: Iterable[ContactEvent],
                    entities: Iterable[EntityId] | None = None,
                    span: tuple[int, int] | None = None) -> "ContactTrace":
        events = list(events)
        ents = set(entities or ())
        for e in events:
            ents.add(e.a)
            ents.add(e.b)
        ordered = sorted(ents)
        idx = {e: i for i, e in enumerate(ordered)}
        a = [idx[e.a] for e in events]
        b = [idx[e.b] for e in events]
        return cls(ordered, a, b, [e.start for e in events], [e.end for e in events], span)

    @classmethod
    def empty(cls) -> "ContactTrace":
        return cls((), [], [], [], [])

    def with_events_mask(self, mask, span=None, entities=None) -> "ContactTrace":
        ents = self.entities if entities is None else entities
        a, b = self.a[mask], self.b[mask]
        if entities is not None:
            remap = np.full(len(self.entities), -1, dtype=np.int64)
            pos = {e: i for i, e in enumerate(ents)}
            for i, e in enumerate(self.entities):
                if e in pos:
                    remap[i] = pos[e]
            a, b = remap[a], remap[b]
            if len(a) and (a.min() < 0 or b.min() < 0):
                raise ValueError("kept event references a dropped entity")
        return ContactTrace(ents, a, b, self.start[mask], self.end[mask],
                            span or (self.t_begin, self.t_end), _sorted=True)

    # -- access -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.a)

    def __iter__(self) -> Iterator[ContactEvent]:
        return iter(self.events)

    @property
    def events(self) -> tuple[ContactEvent, ...]:
        if self._events is None:
            ents = self.entities
            self._events = tuple(
                ContactEvent(ents[a], ents[b], s, e)
                for a, b, s, e in zip(self.a.tolist(), self.b.tolist(),
                                      self.start.tolist(), self.end.tolist()))
        return self._events

    @property
    def span(self) -> tuple[int, int]:
        return self.t_begin, self.t_end

    @property
    def index(self) -> dict[EntityId, int]:
        if self._index is None:
            self._index = {e: i for i, e in enumerate(self.entities)}
        return self._index

    def entities_of_kind(self, *kinds: EntityKind) -> list[EntityId]:
        kinds = kinds or (EntityKind.MOBILE_NODE,)
        return [e for e in self.entities if e.kind in kinds]

    def kind_mask(self, kinds) -> np.ndarray:
        return np.array([e.kind in kinds for e in self.entities], dtype=bool)

    @property
    def n_days(self) -> int:
        if self.t_end <= self.t_begin:
            return 1 if len(self) else 0
        return math.ceil((self.t_end - self.t_begin) / DAY)

    def day_of(self, t) -> np.ndarray:
        return (np.asarray(t, dtype=np.int64) - self.t_begin) // DAY

    def contact_seconds(self) -> int:
        return int((self.end - self.start).sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContactTrace):
            return NotImplemented
        return (self.entities == other.entities and self.span == other.span
                and all(np.array_equal(x, y) for x, y in
                        ((self.a, other.a), (self.b, other.b),
                         (self.start, other.start), (self.end, other.end))))

    __hash__ = None

    def __repr__(self) -> str:
        return (f"ContactTrace({len(self.entities)} entities, {len(self)} events, "
                f"span=[{self.t_begin}, {self.t_end}])")


# -- CSV I/O -----------------------------------------------------------------

def _open_text(path, mode: str):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, mode + "b"), newline="")
    return open(path, mode, newline="")


def _parse_int(tok: str, path, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise TraceFormatError(path, lineno, f"bad {what} {tok!r}") from None


def read_contacts(path, span: tuple[int, int] | None = None) -> ContactTrace:
    """Read ``a,b,start,end[,a_kind,b_kind]`` CSV (optionally gzipped)."""
    events = []
    with _open_text(path, "r") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            row = [c.strip() for c in row]
            if lineno == 1 and row[:4] == CONTACT_HEADER:
                continue
            if len(row) not in (4, 6):
                raise TraceFormatError(path, lineno, f"expected 4 or 6 fields, got {len(row)}")
            ka = kb = EntityKind.MOBILE_NODE
            if len(row) == 6:
                try:
                    ka, kb = EntityKind(row[4]), EntityKind(row[5])
                except ValueError:
                    raise TraceFormatError(path, lineno, "unknown entity kind") from None
            if not row[0] or not row[1]:
                raise TraceFormatError(path, lineno, "empty entity id")
            s = _parse_int(row[2], path, lineno, "start")
            e = _parse_int(row[3], path, lineno, "end")
            try:
                events.append(ContactEvent.make(EntityId(row[0], ka), EntityId(row[1], kb), s, e))
            except ValueError as exc:
                raise TraceFormatError(path, lineno, str(exc)) from None
    return ContactTrace.from_events(events, span=span)


def write_contacts(trace: ContactTrace, path) -> None:
    with_kinds = any(e.kind is not EntityKind.MOBILE_NODE for e in trace.entities)
    ents = trace.entities
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONTACT_HEADER_KINDS if with_kinds else CONTACT_HEADER)
        for a, b, s, e in zip(trace.a.tolist(), trace.b.tolist(),
                              trace.start.tolist(), trace.end.tolist()):
            row = [ents[a].id, ents[b].id, s, e]
            if with_kinds:
                row += [ents[a].kind.value, ents[b].kind.value]
            w.writerow(row)


def read_associations(path) -> list[ApAssociation]:
    out = []
    with _open_text(path, "r") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            row = [c.strip() for c in row]
            if lineno == 1 and row == AP_HEADER:
                continue
            if len(row) != 4:
                raise TraceFormatError(path, lineno, f"expected 4 fields, got {len(row)}")
            if not row[0] or not row[1]:
                raise TraceFormatError(path, lineno, "empty entity id")
            s = _parse_int(row[2], path, lineno, "start")
            e = _parse_int(row[3], path, lineno, "end")
            if s > e:
                raise TraceFormatError(path, lineno, "association ends before it starts")
            out.append(ApAssociation(EntityId.node(row[0]), EntityId.ap(row[1]), s, e))
    return out


# -- operations --------------------------------------------------------------

def _merge_intervals(intervals: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[list[int]] = []
    for s, e in sorted(intervals):
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def _intersect(xs: list[tuple[int, int]], ys: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out, i, j = [], 0, 0
    while i < len(xs) and j < len(ys):
        s = max(xs[i][0], ys[j][0])
        e = min(xs[i][1], ys[j][1])
        if s <= e:
            out.append((s, e))
        if xs[i][1] < ys[j][1]:
            i += 1
        else:
            j += 1
    return out


def infer_contacts(associations: Iterable[ApAssociation]) -> list[ContactEvent]:
    """Pairwise contacts from co-association with the same access point.

    Intervals are closed.  For each node pair the result covers exactly the
    instants at which both nodes are associated to a common AP, one event per
    maximal such interval.
    """
    per_ap: dict[EntityId, dict[EntityId, list]] = defaultdict(lambda: defaultdict(list))
    for assoc in associations:
        per_ap[assoc.ap][assoc.node].append((assoc.start, assoc.end))
    pair_spans: dict[tuple[EntityId, EntityId], list] = defaultdict(list)
    for nodes in per_ap.values():
        merged = {n: _merge_intervals(iv) for n, iv in nodes.items()}
        ordered = sorted(merged)
        for x in range(len(ordered)):
            for y in range(x + 1, len(ordered)):
                common = _intersect(merged[ordered[x]], merged[ordered[y]])
                if common:
                    pair_spans[(ordered[x], ordered[y])].extend(common)
    events = [ContactEvent(a, b, s, e)
              for (a, b), spans in pair_spans.items()
              for s, e in _merge_intervals(spans)]
    events.sort(key=lambda ev: (ev.start, ev.end, ev.a, ev.b))
    return events


def trace_from_associations(associations: Sequence[ApAssociation],
                            include_ap_contacts: bool = True,
                            span: tuple[int, int] | None = None) -> ContactTrace:
    """Node-node contacts inferred via APs, plus node-AP contacts if requested."""
    events = infer_contacts(associations)
    if include_ap_contacts:
        per_pair: dict[tuple, list] = defaultdict(list)
        for a in associations:
            per_pair[(a.node, a.ap)].append((a.start, a.end))
        for (node, ap), iv in per_pair.items():
            events.extend(ContactEvent.make(node, ap, s, e) for s, e in _merge_intervals(iv))
    return ContactTrace.from_events(events, span=span)


def daily_counts(trace: ContactTrace) -> np.ndarray:
    """Matrix [entity, day] of contacts starting that day (both endpoints count)."""
    counts = np.zeros((len(trace.entities), trace.n_days), dtype=np.int64)
    if len(trace):
        day = trace.day_of(trace.start)
        np.add.at(counts, (trace.a, day), 1)
        np.add.at(counts, (trace.b, day), 1)
    return counts


def filter_active(trace: ContactTrace, min_contacts_per_day: int,
                  min_fraction_of_days: float) -> ContactTrace:
    """Keep mobile nodes with enough contacts on enough days.

    Single pass: node activity is judged on the input trace, then events
    touching a dropped node are removed.  Non-mobile entities are kept while
    they still have events.
    """
    if not 0.0 <= min_fraction_of_days <= 1.0:
        raise ValueError("min_fraction_of_days must be in [0, 1]")
    counts = daily_counts(trace)
    n_days = trace.n_days
    active_days = (counts >= min_contacts_per_day).sum(axis=1)
    needed = min_fraction_of_days * n_days
    mobile = trace.kind_mask({EntityKind.MOBILE_NODE})
    keep = ~mobile | (active_days >= needed - 1e-9)
    ev_mask = keep[trace.a] & keep[trace.b] if len(trace) else np.zeros(0, dtype=bool)
    still_used = np.zeros(len(trace.entities), dtype=bool)
    still_used[trace.a[ev_mask]] = True
    still_used[trace.b[ev_mask]] = True
    keep &= mobile | still_used
    kept = [e for e, k in zip(trace.entities, keep) if k]
    if not any(e.kind is EntityKind.MOBILE_NODE for e in kept):
        warnings.warn("activity thresholds removed every node; trace is empty",
                      RuntimeWarning, stacklevel=2)
    return trace.with_events_mask(ev_mask, entities=kept)


@dataclass(frozen=True)
class TraceSplit:
    training: ContactTrace
    evaluation: ContactTrace
    boundary: int


def split(trace: ContactTrace, fraction: float = 0.25) -> TraceSplit:
    """Cut the trace at ``t_begin + fraction * length`` (floored to a second).

    Events straddling the boundary are truncated into both halves.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    t0, t1 = trace.span
    boundary = t0 + int(math.floor(fraction * (t1 - t0)))
    start, end = trace.start, trace.end
    tr = start < boundary
    ev = end > boundary
    ev |= start >= boundary
    training = ContactTrace(trace.entities, trace.a[tr], trace.b[tr], start[tr],
                            np.minimum(end[tr], boundary), (t0, boundary))
    evaluation = ContactTrace(trace.entities, trace.a[ev], trace.b[ev],
                              np.maximum(start[ev], boundary), end[ev], (boundary, t1))
    return TraceSplit(training, evaluation, boundary)


def peers_by_node(trace: ContactTrace, kinds=(EntityKind.MOBILE_NODE,)) -> list[set[int]]:
    peers: list[set[int]] = [set() for _ in trace.entities]
    ok = trace.kind_mask(set(kinds))
    for a, b in zip(trace.a.tolist(), trace.b.tolist()):
        if ok[b]:
            peers[a].add(b)
        if ok[a]:
            peers[b].add(a)
    return peers


def _weekly_peers(evaluation: ContactTrace, week_length: int, kinds) -> tuple[int, dict]:
    n_weeks = (evaluation.t_end - evaluation.t_begin) // week_length
    weekly: dict[tuple[int, int], set[int]] = defaultdict(set)
    ok = evaluation.kind_mask(set(kinds))
    weeks = (evaluation.start - evaluation.t_begin) // week_length
    for a, b, w in zip(evaluation.a.tolist(), evaluation.b.tolist(), weeks.tolist()):
        if w >= n_weeks:
            continue
        if ok[b]:
            weekly[(a, w)].add(b)
        if ok[a]:
            weekly[(b, w)].add(a)
    return int(n_weeks), weekly


def stability(node: EntityId, parts: TraceSplit, week_length: int = WEEK) -> float:
    """Mean over whole evaluation weeks of |peers that week ∩ training peers| / |training peers|."""
    return stabilities(parts, week_length, nodes=[node])[node]


def stabilities(parts: TraceSplit, week_length: int = WEEK,
                nodes: Iterable[EntityId] | None = None,
                kinds=(EntityKind.MOBILE_NODE,)) -> dict[EntityId, float]:
    training, evaluation = parts.training, parts.evaluation
    peers_t = peers_by_node(training, kinds)
    n_weeks, weekly = _weekly_peers(evaluation, week_length, kinds)
    idx_e = evaluation.index
    strict = nodes is not None
    if nodes is None:
        nodes = [e for e in training.entities if e.kind in kinds]
    out = {}
    for node in nodes:
        ti = training.index.get(node)
        known = peers_t[ti] if ti is not None else set()
        if not known:
            if strict:
                raise UndefinedStabilityError(f"{node} met nobody during training")
            continue
        if n_weeks == 0:
            if strict:
                raise UndefinedStabilityError("evaluation shorter than one week")
            continue
        known_ids = {training.entities[j] for j in known}
        ei = idx_e.get(node)
        total = 0.0
        for w in range(n_weeks):
            met = weekly.get((ei, w), ()) if ei is not None else ()
            met_ids = {evaluation.entities[j] for j in met}
            total += len(met_ids & known_ids) / len(known_ids)
        out[node] = total / n_weeks
    return out


@dataclass(frozen=True)
class TraceStats:
    total_nodes: int
    avg_active_per_day: float
    avg_contacts_per_node_per_day: float
    avg_stability: float

    def as_row(self) -> dict[str, float]:
        return {
            "total_nodes": self.total_nodes,
            "avg_active_per_day": round(self.avg_active_per_day, 6),
            "avg_contacts_per_node_per_day": round(self.avg_contacts_per_node_per_day, 6),
            "avg_stability": round(self.avg_stability, 6),
        }


def trace_stats(trace: ContactTrace, fraction: float = 0.25,
                week_length: int = WEEK) -> TraceStats:
    """Dataset summary in the shape of a Table-1 row.

    Contacts per node per day counts each contact for both endpoints and
    averages over (mobile node, day) pairs.  Stability averages over nodes
    for which it is defined; it is 0 when no node qualifies.
    """
    mobile = trace.kind_mask({EntityKind.MOBILE_NODE})
    n_nodes = int(mobile.sum())
    if len(trace) == 0 or n_nodes == 0:
        return TraceStats(n_nodes, 0.0, 0.0, 0.0)
    counts = daily_counts(trace)[mobile]
    n_days = trace.n_days
    active = float((counts > 0).sum(axis=0).mean())
    per_node_day = float(counts.sum() / (n_nodes * n_days))
    stab = 0.0
    if trace.t_end > trace.t_begin:
        values = stabilities(split(trace, fraction), week_length)
        if values:
            stab = float(np.mean([values[k] for k in sorted(values)]))
    return TraceStats(n_nodes, active, per_node_day, stab)
