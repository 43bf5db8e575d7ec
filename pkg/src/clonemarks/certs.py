"""Community Certificates: construction from training logs, freshness,
validity and the community-authentication exchange.

Timestamps and windows are in seconds; ``fi`` stores windows in days as the
authority computes them and :func:`window_seconds` converts.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from . import kernels
from .community import pair_meeting_days
from .identity import (Authority, EntityId, EntityKind, PrivateKey, Signature,
                       _pack, entity_bytes, sign)
from .trace import DAY, ContactTrace

CERT_TAG = b"COMC"
UPDATE_TAG = b"SU"

NODE_KINDS = frozenset({EntityKind.MOBILE_NODE})
AP_KINDS = frozenset({EntityKind.ACCESS_POINT})
ALL_KINDS = NODE_KINDS | AP_KINDS


class EmptyFriendSetError(ValueError):
    pass


class CertificateVerificationError(ValueError):
    pass


@dataclass(frozen=True)
class SignedUpdate:
    signer: EntityId
    owner: EntityId
    t: int
    sig: Signature

    @staticmethod
    def payload_for(owner: EntityId, t: int) -> bytes:
        return _pack(UPDATE_TAG, entity_bytes(owner), int(t).to_bytes(8, "big", signed=True))

    @classmethod
    def create(cls, owner: EntityId, t: int, key: PrivateKey) -> "SignedUpdate":
        return cls(key.owner, owner, int(t), sign(cls.payload_for(owner, t), key))

    def verify(self, pki: Authority) -> bool:
        return (self.sig.signer == self.signer
                and pki.verify(self.payload_for(self.owner, self.t), self.sig, self.signer))

    @property
    def from_authority(self) -> bool:
        return self.signer.kind is EntityKind.AUTHORITY


@dataclass(frozen=True)
class CommunityCertificate:
    owner: EntityId
    fs: tuple            # sorted friend set
    fi: Mapping          # friend -> freshness window in days
    k: int
    ca_sig: Signature
    su: Mapping = field(default_factory=dict)   # friend -> SignedUpdate
    flagged: bool = False   # k could not avoid false positives

    @staticmethod
    def payload_for(owner: EntityId, fs: Iterable[EntityId], fi: Mapping, k: int) -> bytes:
        fs = sorted(fs)
        return _pack(CERT_TAG, entity_bytes(owner),
                     _pack(*(entity_bytes(j) for j in fs)),
                     _pack(*(repr(float(fi[j])).encode() for j in fs)),
                     int(k).to_bytes(4, "big"))

    def payload(self) -> bytes:
        return self.payload_for(self.owner, self.fs, self.fi, self.k)

    def check_shape(self) -> None:
        if list(self.fs) != sorted(set(self.fs)):
            raise CertificateVerificationError("friend set not canonical")
        if set(self.fi) != set(self.fs):
            raise CertificateVerificationError("freshness windows not defined exactly on FS")
        if not 1 <= self.k <= len(self.fs):
            raise CertificateVerificationError("k outside [1, |FS|]")
        if not set(self.su) <= set(self.fs):
            raise CertificateVerificationError("signed update from outside FS")

    def verify_ca(self, pki: Authority) -> bool:
        try:
            self.check_shape()
        except CertificateVerificationError:
            return False
        return (self.ca_sig.signer == pki.entity
                and pki.verify(self.payload(), self.ca_sig, pki.entity))

    def window_seconds(self, j: EntityId) -> int:
        return window_seconds(self.fi[j])

    @property
    def seed_window(self) -> int:
        return window_seconds(max(self.fi.values()))

    def to_json(self) -> str:
        return json.dumps({
            "owner": self.owner.id,
            "owner_kind": self.owner.kind.value,
            "fs": [{"id": j.id, "kind": j.kind.value, "fi_days": self.fi[j]} for j in self.fs],
            "k": self.k,
            "flagged": self.flagged,
            "ca_sig": self.ca_sig.to_bytes().hex(),
            "su": [{"friend": j.id, "signer": self.su[j].signer.id, "t": self.su[j].t}
                   for j in self.fs if j in self.su],
        }, indent=2)

    def to_bytes(self) -> bytes:
        """Canonical encoding: owner, fs, fi, k, ca_sig, su (fs order)."""
        su = [_pack(entity_bytes(self.su[j].signer), self.su[j].t.to_bytes(8, "big", signed=True),
                    self.su[j].sig.to_bytes()) if j in self.su else b"" for j in self.fs]
        return _pack(self.payload(), self.ca_sig.to_bytes(), _pack(*su))


def window_seconds(days: float) -> int:
    return int(round(days * DAY))


# -- construction ------------------------------------------------------------

@dataclass(frozen=True)
class FriendProfile:
    peer: EntityId
    days: tuple[int, ...]   # distinct trace-local meeting days, ascending

    @property
    def d(self) -> int:
        return len(self.days)

    @property
    def gaps(self) -> list[int]:
        return [b - a for a, b in zip(self.days, self.days[1:])]


def friend_profiles(training: ContactTrace, i: EntityId,
                    candidate_kinds=NODE_KINDS) -> dict[EntityId, FriendProfile]:
    """Meeting-day profile of every candidate ``i`` met during training."""
    return all_friend_profiles(training, candidate_kinds, owners=[i]).get(i, {})


def all_friend_profiles(training: ContactTrace, candidate_kinds=NODE_KINDS,
                        owners: Iterable[EntityId] | None = None) -> dict:
    kinds = set(candidate_kinds) | {EntityKind.MOBILE_NODE}
    a, b, day = pair_meeting_days(training, kinds)
    ents = training.entities
    wanted = None if owners is None else {training.index[o] for o in owners if o in training.index}
    raw: dict[int, dict[int, list[int]]] = {}
    for x, y, d in zip(a.tolist(), b.tolist(), day.tolist()):
        for own, peer in ((x, y), (y, x)):
            if wanted is not None and own not in wanted:
                continue
            if ents[own].kind is not EntityKind.MOBILE_NODE:
                continue
            if ents[peer].kind not in candidate_kinds:
                continue
            raw.setdefault(own, {}).setdefault(peer, []).append(d)
    return {ents[o]: {ents[p]: FriendProfile(ents[p], tuple(sorted(ds)))
                      for p, ds in peers.items()}
            for o, peers in raw.items()}


def compute_fs(training: ContactTrace | Mapping, i: EntityId | None = None,
               candidate_kinds=NODE_KINDS) -> frozenset:
    """Friends met on at least the mean number of meeting days.

    Accepts a trace (profiles are derived for ``i``) or a ready mapping
    peer -> number of meeting days.
    """
    if isinstance(training, ContactTrace):
        d = {j: p.d for j, p in friend_profiles(training, i, candidate_kinds).items()}
    else:
        d = dict(training)
    if not d:
        raise EmptyFriendSetError(f"{i} met no candidate during training")
    # exact rational comparison: d_ij * |S| >= sum(d)
    total, n = sum(d.values()), len(d)
    return frozenset(j for j, dij in d.items() if dij * n >= total)


def compute_fi(training: ContactTrace | Mapping, i: EntityId | None = None,
               fs: Iterable[EntityId] = (), training_days: float | None = None) -> dict:
    """Mean gap in days between consecutive meeting days, per friend.

    A friend seen on a single day gets the whole training length.  Accepts a
    trace or a mapping friend -> meeting days (then ``training_days`` is
    required for the single-day fallback).
    """
    if isinstance(training, ContactTrace):
        profiles = friend_profiles(training, i, ALL_KINDS)
        days = {j: profiles[j].days for j in fs}
        training_days = (training.t_end - training.t_begin) / DAY
    else:
        days = {j: tuple(sorted(set(training[j]))) for j in (fs or training)}
    out = {}
    for j, ds in days.items():
        if len(ds) < 2:
            if training_days is None:
                raise ValueError("training_days needed for single-day friends")
            out[j] = float(training_days)
        else:
            out[j] = (ds[-1] - ds[0]) / (len(ds) - 1)
    return out


def is_fresh(update: SignedUpdate | int, fi_window: int, now: int) -> bool:
    """``t <= now < t + window``: strict at the end, and never ahead of its timestamp."""
    t = update.t if isinstance(update, SignedUpdate) else update
    return t <= now < t + fi_window


def fresh_count(cert: CommunityCertificate, now: int, pki: Authority | None = None) -> int:
    seed_w = cert.seed_window
    n = 0
    for j in cert.fs:
        u = cert.su.get(j)
        if u is None or u.owner != cert.owner:
            continue
        if pki is not None and not u.verify(pki):
            continue
        if u.from_authority:
            w = seed_w
        elif u.signer == j:
            w = cert.window_seconds(j)
        else:
            continue
        if is_fresh(u, w, now):
            n += 1
    return n


def is_valid(cert: CommunityCertificate, now: int, pki: Authority | None = None) -> bool:
    """At least ``k`` verified signed updates are fresh at ``now``.

    Authority-signed seed updates use the largest friend window.  With a
    ``pki`` the CA signature is checked first and a bad one raises
    CertificateVerificationError.
    """
    if pki is not None and not cert.verify_ca(pki):
        raise CertificateVerificationError(f"bad authority signature on certificate of {cert.owner}")
    return fresh_count(cert, now, pki) >= cert.k


def refresh_on_meeting(cert: CommunityCertificate, friend: EntityId, now: int,
                       friend_key: PrivateKey) -> CommunityCertificate:
    """Replace ``su[friend]`` with a fresh update signed by the friend."""
    if friend not in cert.fi:
        return cert
    if friend_key.owner != friend:
        raise ValueError("update must be signed by the friend met")
    su = dict(cert.su)
    su[friend] = SignedUpdate.create(cert.owner, now, friend_key)
    return replace(cert, su=su)


# -- refresh timelines and k selection ----------------------------------------

@dataclass(frozen=True)
class Timeline:
    """Refresh instants per friend in CSR form plus window lengths (seconds)."""
    friends: tuple
    times: np.ndarray
    offsets: np.ndarray
    windows: np.ndarray
    issue: int
    seed_expiry: int

    def refreshes(self, f: int) -> np.ndarray:
        return self.times[self.offsets[f]:self.offsets[f + 1]]

    @property
    def first_refresh(self) -> int | None:
        return int(self.times.min()) if len(self.times) else None


def refresh_points(trace: ContactTrace, owner: EntityId, friends: Iterable[EntityId]) -> dict:
    """Instants at which ``owner`` can collect an update from each friend.

    Both the start and the end of a contact count: a friend co-present over
    an interval signs at arrival and again at departure.
    """
    out = {j: [] for j in friends}
    idx = trace.index
    oi = idx.get(owner)
    if oi is None:
        return {j: np.zeros(0, dtype=np.int64) for j in out}
    want = {idx[j]: j for j in out if j in idx}
    m = (trace.a == oi) | (trace.b == oi)
    for a, b, s, e in zip(trace.a[m].tolist(), trace.b[m].tolist(),
                          trace.start[m].tolist(), trace.end[m].tolist()):
        other = b if a == oi else a
        j = want.get(other)
        if j is not None:
            out[j].append(s)
            if e != s:
                out[j].append(e)
    return {j: np.unique(np.asarray(v, dtype=np.int64)) for j, v in out.items()}


def timeline_from_points(fs, fi, points: Mapping, issue: int) -> Timeline:
    fs = tuple(sorted(fs))
    arrays = [np.asarray(points.get(j, ()), dtype=np.int64) for j in fs]
    arrays = [a[a >= issue] for a in arrays]
    offsets = np.zeros(len(fs) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(a) for a in arrays])
    times = np.concatenate(arrays) if arrays else np.zeros(0, dtype=np.int64)
    windows = np.array([window_seconds(fi[j]) for j in fs], dtype=np.int64)
    seed_w = int(windows.max()) if len(windows) else 0
    return Timeline(fs, times.astype(np.int64), offsets, windows, int(issue), int(issue) + seed_w)


def build_timeline(cert_or_fs, fi=None, evaluation: ContactTrace | None = None,
                   owner: EntityId | None = None, issue: int | None = None) -> Timeline:
    if isinstance(cert_or_fs, CommunityCertificate):
        cert = cert_or_fs
        fs, fi, owner = cert.fs, cert.fi, cert.owner
    else:
        fs = cert_or_fs
    if issue is None:
        issue = evaluation.t_begin
    return timeline_from_points(fs, fi, refresh_points(evaluation, owner, fs), issue)


def fresh_segments(tl: Timeline, t_from: int, t_end: int):
    return kernels.fresh_count_segments(tl.times, tl.offsets, tl.windows, tl.issue,
                                        tl.seed_expiry, int(t_from), int(t_end))


def invalid_intervals(tl: Timeline, k: int, t_end: int,
                      t_from: int | None = None) -> list[tuple[int, int]]:
    """Maximal intervals in [t_from, t_end) with fewer than ``k`` fresh updates.

    ``t_from`` defaults to the first refresh.
    """
    if t_from is None:
        t_from = tl.first_refresh
        if t_from is None:
            return []
    starts, counts = fresh_segments(tl, t_from, t_end)
    out: list[tuple[int, int]] = []
    bounds = list(starts.tolist()) + [int(t_end)]
    for s, c, e in zip(starts.tolist(), counts.tolist(), bounds[1:]):
        if c < k:
            if out and out[-1][1] == s:
                out[-1] = (out[-1][0], e)
            else:
                out.append((s, e))
    return out


@dataclass(frozen=True)
class KChoice:
    k: int
    flagged: bool
    min_fresh: int


def select_k(tl: Timeline, t_end: int) -> KChoice:
    """Largest k such that the honest owner stays valid after its first refresh.

    Equal to the minimum number of fresh updates over [first refresh, t_end),
    capped to [1, |FS|]; ``flagged`` when even k=1 has false positives.
    """
    n = len(tl.friends)
    if n == 0:
        raise EmptyFriendSetError("empty friend set")
    t_from = tl.first_refresh
    if t_from is None or t_from >= t_end:
        return KChoice(n, False, n)
    _, counts = fresh_segments(tl, t_from, t_end)
    low = int(counts.min()) if len(counts) else n
    if low <= 0:
        return KChoice(1, True, low)
    return KChoice(min(low, n), False, low)


# -- issuance and authentication ----------------------------------------------

def issue_certificate(ca: Authority, i: EntityId, training: ContactTrace,
                      candidate_kinds=NODE_KINDS, k_policy: int | str = "max-no-fp",
                      evaluation: ContactTrace | None = None,
                      profiles: Mapping | None = None) -> CommunityCertificate:
    """Build, sign and seed the certificate of ``i``.

    ``k_policy`` is a fixed k (clamped to |FS|) or ``"max-no-fp"``, which
    replays ``evaluation`` honestly and picks the largest k without false
    positives.  The seed updates are authority-signed timestamps at issue
    time so the certificate is valid immediately.
    """
    if profiles is None:
        profiles = friend_profiles(training, i, candidate_kinds)
    if not profiles:
        raise EmptyFriendSetError(f"{i} met no candidate during training; cannot certify")
    fs = compute_fs({j: p.d for j, p in profiles.items()}, i)
    training_days = (training.t_end - training.t_begin) / DAY
    fi = compute_fi({j: profiles[j].days for j in fs}, fs=fs, training_days=training_days)
    issue = training.t_end
    flagged = False
    if isinstance(k_policy, str):
        if k_policy != "max-no-fp":
            raise ValueError(f"unknown k policy {k_policy!r}")
        if evaluation is None:
            raise ValueError("max-no-fp needs the evaluation trace")
        choice = select_k(build_timeline(fs, fi, evaluation, i, issue), evaluation.t_end)
        k, flagged = choice.k, choice.flagged
    else:
        k = max(1, min(int(k_policy), len(fs)))
    fs_sorted = tuple(sorted(fs))
    fi = {j: fi[j] for j in fs_sorted}
    ca_sig = ca.sign(CommunityCertificate.payload_for(i, fs_sorted, fi, k), ca.entity)
    ca_key = ca.private_key(ca.entity)
    su = {j: SignedUpdate.create(i, issue, ca_key) for j in fs_sorted}
    return CommunityCertificate(i, fs_sorted, fi, k, ca_sig, su, flagged)


class AuthResult(enum.Enum):
    AUTH_OK = "AUTH_OK"
    AUTH_DENIED = "AUTH_DENIED"


@dataclass(frozen=True)
class AuthResponse:
    result: AuthResult
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.result is AuthResult.AUTH_OK


def authenticate(cert, verifier: Authority, now: int) -> AuthResponse:
    """Verifier side of AUTH_RQST / AUTH_RPL(ComC) / AUTH_OK|AUTH_DENIED."""
    if not isinstance(cert, CommunityCertificate):
        return AuthResponse(AuthResult.AUTH_DENIED, "malformed certificate")
    try:
        cert.check_shape()
    except CertificateVerificationError as exc:
        return AuthResponse(AuthResult.AUTH_DENIED, f"malformed certificate: {exc}")
    if not cert.verify_ca(verifier):
        return AuthResponse(AuthResult.AUTH_DENIED, "authority signature does not verify")
    if verifier.is_revoked(cert.owner):
        return AuthResponse(AuthResult.AUTH_DENIED, "owner revoked")
    n = fresh_count(cert, now, verifier)
    if n < cert.k:
        return AuthResponse(AuthResult.AUTH_DENIED, f"{n} fresh updates, need {cert.k}")
    return AuthResponse(AuthResult.AUTH_OK)


def closed_form_expiry(cert: CommunityCertificate) -> int | None:
    """Instant at which the certificate stops being valid if never refreshed."""
    seed_w = cert.seed_window
    exp = []
    for j in cert.fs:
        u = cert.su.get(j)
        if u is None or u.owner != cert.owner or not (u.from_authority or u.signer == j):
            continue
        exp.append(u.t + (seed_w if u.from_authority else cert.window_seconds(j)))
    if len(exp) < cert.k:
        return None
    return sorted(exp, reverse=True)[cert.k - 1]
