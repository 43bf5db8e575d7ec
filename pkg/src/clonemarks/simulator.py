"""Trace-driven attack experiments.

Insider: a clone of the victim follows a community member's (the donor's)
contacts from the attack time on; Personal Marks detects it as soon as some
member of the victim's community has met both replicas.  Outsider: the clone
never meets the victim's friends, so the certificate survives only until its
k-th freshest signed update goes stale.
"""

from __future__ import annotations

import enum
import logging
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import kernels
from .certs import (ALL_KINDS, AP_KINDS, NODE_KINDS, CommunityCertificate,
                    EmptyFriendSetError, Timeline, all_friend_profiles,
                    build_timeline, invalid_intervals, issue_certificate)
from .community import (Community, build_social_graph, community_map,
                        k_clique_communities)
from .identity import Authority, EntityId
from .marks import Device, PersonalMarks
from .trace import DAY, ContactTrace, TraceSplit, split

log = logging.getLogger(__name__)

CANDIDATE_KINDS = {"node": NODE_KINDS, "ap": AP_KINDS, "both": ALL_KINDS}


class AttackKind(enum.Enum):
    INSIDER = "insider"
    OUTSIDER = "outsider"


class Outcome(enum.Enum):
    DETECTED_BY_MARKS = "detected_by_marks"
    CERTIFICATE_EXPIRED = "certificate_expired"
    NOT_DETECTED = "not_detected"


@dataclass(frozen=True, order=True)
class AttackScenario:
    victim: EntityId
    mobility_donor: EntityId | None
    t0: int
    kind: AttackKind = field(compare=False)


@dataclass(frozen=True)
class DetectionReport:
    scenario: AttackScenario
    outcome: Outcome
    latency: int | None = None      # seconds; certificate lifetime for outsiders
    detector: EntityId | None = None
    t_detect: int | None = None

    @property
    def latency_days(self) -> float | None:
        return None if self.latency is None else self.latency / DAY


@dataclass(frozen=True)
class SimulationConfig:
    training_fraction: float = 0.25
    k_clique: int = 3
    min_days: int = 3
    candidate_kinds: str = "node"
    seed: int = 0
    # "all": t0 at the start of every evaluation day; an int n samples n of them
    attack_days: str | int = "all"
    attack_offset: int = 0          # seconds after the day start

    def __post_init__(self):
        if not 0.0 < self.training_fraction < 1.0:
            raise ValueError("training_fraction must be in (0, 1)")
        if self.k_clique < 3:
            raise ValueError("k_clique must be >= 3")
        if self.min_days < 1:
            raise ValueError("min_days must be >= 1")
        if self.candidate_kinds not in CANDIDATE_KINDS:
            raise ValueError(f"candidate_kinds must be one of {sorted(CANDIDATE_KINDS)}")
        if self.attack_days != "all" and (not isinstance(self.attack_days, int)
                                          or self.attack_days < 1):
            raise ValueError("attack_days must be 'all' or a positive integer")
        if not 0 <= self.attack_offset < DAY:
            raise ValueError("attack_offset must be within a day")

    @property
    def kinds(self) -> frozenset:
        return CANDIDATE_KINDS[self.candidate_kinds]


def attack_times(evaluation: ContactTrace, config: SimulationConfig,
                 key: tuple = ()) -> list[int]:
    """Attack instants for one scenario family, deterministic in (seed, key)."""
    times = list(range(evaluation.t_begin + config.attack_offset, evaluation.t_end, DAY))
    if config.attack_days == "all" or config.attack_days >= len(times):
        return times
    rng = random.Random(repr((config.seed,) + tuple(str(k) for k in key)))
    return sorted(rng.sample(times, config.attack_days))


# -- per-pair meeting index -----------------------------------------------------

class PairIndex:
    """Sorted contact start times per unordered pair."""

    def __init__(self, trace: ContactTrace):
        self.trace = trace
        n = max(len(trace.entities), 1)
        key = trace.a * n + trace.b
        order = np.lexsort((trace.start, key))
        self.times = np.ascontiguousarray(trace.start[order])
        skey = key[order]
        uniq, lo = np.unique(skey, return_index=True)
        hi = np.append(lo[1:], len(skey))
        self._n = n
        self._range = dict(zip(uniq.tolist(), zip(lo.tolist(), hi.tolist())))

    def range(self, u: int, v: int) -> tuple[int, int]:
        if u > v:
            u, v = v, u
        return self._range.get(u * self._n + v, (0, 0))

    def starts(self, u: int, v: int) -> np.ndarray:
        lo, hi = self.range(u, v)
        return self.times[lo:hi]


# -- insider ---------------------------------------------------------------------

@dataclass
class InsiderTable:
    """Columnar insider results; one row per (victim, donor, t0)."""
    victim: np.ndarray
    donor: np.ndarray
    t0: np.ndarray
    t_detect: np.ndarray     # -1 when not detected
    detector: np.ndarray     # -1 when not detected
    entities: tuple

    def __len__(self) -> int:
        return len(self.t0)

    def latency(self) -> np.ndarray:
        return np.where(self.t_detect >= 0, self.t_detect - self.t0, -1)

    def reports(self) -> list[DetectionReport]:
        ents = self.entities
        out = []
        for v, d, t0, td, det in zip(self.victim.tolist(), self.donor.tolist(),
                                     self.t0.tolist(), self.t_detect.tolist(),
                                     self.detector.tolist()):
            sc = AttackScenario(ents[v], ents[d], t0, AttackKind.INSIDER)
            if td < 0:
                out.append(DetectionReport(sc, Outcome.NOT_DETECTED))
            else:
                out.append(DetectionReport(sc, Outcome.DETECTED_BY_MARKS, td - t0,
                                           ents[det], td))
        return out


def insider_table(parts: TraceSplit, communities: Iterable[Community],
                  config: SimulationConfig = SimulationConfig(),
                  victims: Iterable[EntityId] | None = None) -> InsiderTable:
    evaluation = parts.evaluation
    idx = evaluation.index
    peers = community_map(communities)
    pairs = PairIndex(evaluation)
    cols: dict[str, list] = {k: [] for k in ("victim", "donor", "t0", "t_detect", "detector")}
    for victim in sorted(peers if victims is None else victims):
        vi = idx.get(victim)
        detectors = sorted(peers.get(victim, ()))
        if vi is None or not detectors:
            continue
        det_idx = [idx.get(m, -1) for m in detectors]
        vic = np.array([pairs.range(vi, m) if m >= 0 else (0, 0) for m in det_idx],
                       dtype=np.int64).reshape(-1, 2)
        for donor in detectors:
            di = idx.get(donor)
            t0s = np.asarray(attack_times(evaluation, config, (victim.id, donor.id)),
                             dtype=np.int64)
            if not len(t0s):
                continue
            if di is None:
                when = np.full(len(t0s), -1, dtype=np.int64)
                who = when.copy()
            else:
                don = np.array([pairs.range(di, m) if m >= 0 and m != di else (0, 0)
                                for m in det_idx], dtype=np.int64).reshape(-1, 2)
                when, who = kernels.insider_first_detection(
                    pairs.times, vic[:, 0], vic[:, 1], don[:, 0], don[:, 1], t0s)
            n = len(t0s)
            cols["victim"].append(np.full(n, vi, dtype=np.int64))
            cols["donor"].append(np.full(n, -1 if di is None else di, dtype=np.int64))
            cols["t0"].append(t0s)
            cols["t_detect"].append(np.asarray(when, dtype=np.int64))
            who = np.asarray(who, dtype=np.int64)
            cols["detector"].append(np.where(who >= 0, np.array(det_idx + [-1])[who], -1))
    arrays = {k: (np.concatenate(v) if v else np.zeros(0, dtype=np.int64))
              for k, v in cols.items()}
    return InsiderTable(entities=evaluation.entities, **arrays)


def run_insider_experiment(parts: TraceSplit, communities: Iterable[Community],
                           config: SimulationConfig = SimulationConfig()) -> list[DetectionReport]:
    """One report per (victim, donor in community_of(victim), attack time)."""
    return insider_table(parts, communities, config).reports()


def detection_oracle(evaluation: ContactTrace, peers: Mapping, scenario: AttackScenario) -> tuple:
    """Exhaustive meeting-order scan: (t_detect, detector) or (None, None).

    Walks every pair of (clone meeting, victim meeting) with the same
    community member and keeps the earliest instant at which both happened.
    """
    victim, donor, t0 = scenario.victim, scenario.mobility_donor, scenario.t0
    members = peers.get(victim, set())
    clone_meets, victim_meets = [], []
    for ev in evaluation.events:
        if ev.start < t0:
            continue
        for me, other in ((ev.a, ev.b), (ev.b, ev.a)):
            if other not in members:
                continue
            if me == donor and other != victim:
                clone_meets.append((other, ev.start))
            if me == victim:
                victim_meets.append((other, ev.start))
    best = None
    for m1, tc in clone_meets:
        for m2, tv in victim_meets:
            if m1 != m2:
                continue
            t = max(tc, tv)
            if best is None or (t, m1) < best:
                best = (t, m1)
    return best if best is not None else (None, None)


def replay_insider_protocol(evaluation: ContactTrace, peers: Mapping,
                            scenario: AttackScenario, pki: Authority,
                            seed: int = 0) -> DetectionReport:
    """Run the actual mark protocol for the victim's identity over the trace.

    Victim-side meetings start at the beginning of ``evaluation``; at t0 the
    victim's device is copied and the copy takes over the donor's contacts
    with the victim's community.  The first mark check that accuses the
    victim ends the scenario.
    """
    victim, donor, t0 = scenario.victim, scenario.mobility_donor, scenario.t0
    engine = PersonalMarks(pki, peers, seed=seed)
    members = peers.get(victim, set())
    real = engine.device(victim)
    clone: Device | None = None
    schedule = []
    for ev in evaluation.events:
        for me, other in ((ev.a, ev.b), (ev.b, ev.a)):
            if other not in members:
                continue
            if me == victim:
                schedule.append((ev.start, 0, other))
            elif me == donor and other != victim and ev.start >= t0:
                schedule.append((ev.start, 1, other))
    schedule.sort(key=lambda s: (s[0], s[1], s[2]))
    for t, who, other in schedule:
        if clone is None and t >= t0:
            clone = real.clone()
        dev = real if who == 0 else clone
        out = engine.meet(dev, engine.device(other), t)
        if out is None:
            continue
        for ev in out.evidence:
            if ev.accused == victim:
                return DetectionReport(scenario, Outcome.DETECTED_BY_MARKS, t - t0,
                                       ev.detector, t)
        if pki.is_revoked(victim):
            break
    return DetectionReport(scenario, Outcome.NOT_DETECTED)


# -- community certificates --------------------------------------------------------

def issue_all(ca: Authority, parts: TraceSplit, config: SimulationConfig = SimulationConfig(),
              k_policy: int | str = "max-no-fp",
              nodes: Iterable[EntityId] | None = None) -> dict[EntityId, CommunityCertificate]:
    """Certificates for every mobile node that met a candidate during training."""
    profiles = all_friend_profiles(parts.training, config.kinds)
    out = {}
    for node in sorted(profiles if nodes is None else nodes):
        prof = profiles.get(node)
        if not prof:
            log.info("no training contacts for %s; not certified", node)
            continue
        ca.enroll(node)
        try:
            out[node] = issue_certificate(ca, node, parts.training, config.kinds, k_policy,
                                          parts.evaluation, profiles=prof)
        except EmptyFriendSetError:
            continue
    return out


def _timeline(cert: CommunityCertificate, parts: TraceSplit) -> Timeline:
    return build_timeline(cert, evaluation=parts.evaluation, issue=parts.boundary)


def run_outsider_experiment(parts: TraceSplit, certs: Mapping[EntityId, CommunityCertificate],
                            config: SimulationConfig = SimulationConfig()) -> list[DetectionReport]:
    """Certificate lifetime after t0 when the holder never meets a friend again."""
    reports = []
    for node in sorted(certs):
        cert = certs[node]
        tl = _timeline(cert, parts)
        t0s = np.asarray(attack_times(parts.evaluation, config, (node.id, "outsider")),
                         dtype=np.int64)
        if not len(t0s):
            continue
        dur = kernels.outsider_durations(tl.times, tl.offsets, tl.windows, tl.seed_expiry,
                                         t0s, cert.k)
        for t0, d in zip(t0s.tolist(), np.asarray(dur).tolist()):
            sc = AttackScenario(node, None, t0, AttackKind.OUTSIDER)
            reports.append(DetectionReport(sc, Outcome.CERTIFICATE_EXPIRED, int(d)))
    return reports


@dataclass(frozen=True)
class FalsePositives:
    node: EntityId
    intervals: tuple[tuple[int, int], ...]

    @property
    def count(self) -> int:
        return len(self.intervals)

    @property
    def max_length(self) -> int:
        return max((e - s for s, e in self.intervals), default=0)


def run_false_positive_experiment(parts: TraceSplit,
                                  certs: Mapping[EntityId, CommunityCertificate],
                                  k: int | None = 1) -> dict[EntityId, FalsePositives]:
    """Intervals after the first refresh in which the honest owner is invalid.

    ``k=None`` uses each certificate's own threshold.
    """
    out = {}
    for node in sorted(certs):
        cert = certs[node]
        tl = _timeline(cert, parts)
        kk = cert.k if k is None else k
        iv = invalid_intervals(tl, kk, parts.evaluation.t_end)
        out[node] = FalsePositives(node, tuple(iv))
    return out


# -- whole pipeline -----------------------------------------------------------------

@dataclass
class PipelineResult:
    parts: TraceSplit
    communities: list[Community]
    certs: dict
    insider: InsiderTable
    outsider: list[DetectionReport]
    false_positives: dict


def run_pipeline(trace: ContactTrace, config: SimulationConfig = SimulationConfig(),
                 ca: Authority | None = None) -> PipelineResult:
    parts = split(trace, config.training_fraction)
    graph = build_social_graph(parts.training, config.min_days)
    comms = k_clique_communities(graph, config.k_clique)
    ca = ca or Authority(seed=config.seed)
    certs = issue_all(ca, parts, config)
    return PipelineResult(parts, comms, certs, insider_table(parts, comms, config),
                          run_outsider_experiment(parts, certs, config),
                          run_false_positive_experiment(parts, certs, k=1))
