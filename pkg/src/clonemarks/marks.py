"""Personal Marks: mark update, mark check and clone evidence.

A mark is a tuple (MARK, t, r_i, r_j) signed by both peers, where ``i`` is the
peer with the lower id.  When two community peers meet again each one asks
the other for its latest mark (a signed MARK_RPL statement, possibly "no
mark") and compares it with its own.  A mismatch means one of the two
identities has a second device that missed an update; the holder of the
older mark is the cloned identity.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Iterable

from .identity import (Authority, EntityId, PrivateKey, RevocationRejected,
                       Signature, _pack, _unpack, entity_bytes, sign)

log = logging.getLogger(__name__)

MARK_TAG = b"MARK"
REPLY_TAG = b"MARK_RPL"
NONCE_BITS = 128


class ProtocolViolation(Exception):
    """A peer sent a message whose signatures do not verify (tampering)."""


@dataclass(frozen=True)
class Mark:
    t: int
    r_i: int
    r_j: int
    sig_i: Signature
    sig_j: Signature
    tag: bytes = MARK_TAG

    @staticmethod
    def payload_for(t: int, r_i: int, r_j: int) -> bytes:
        return _pack(MARK_TAG, int(t).to_bytes(8, "big", signed=True),
                     r_i.to_bytes(NONCE_BITS // 8, "big"),
                     r_j.to_bytes(NONCE_BITS // 8, "big"))

    def payload(self) -> bytes:
        return self.payload_for(self.t, self.r_i, self.r_j)

    @property
    def parties(self) -> tuple[EntityId, EntityId]:
        return self.sig_i.signer, self.sig_j.signer

    def is_valid(self, pki: Authority) -> bool:
        i, j = self.parties
        if self.tag != MARK_TAG or not i < j:
            return False
        p = self.payload()
        return pki.verify(p, self.sig_i, i) and pki.verify(p, self.sig_j, j)

    def to_bytes(self) -> bytes:
        return _pack(self.tag, int(self.t).to_bytes(8, "big", signed=True),
                     self.r_i.to_bytes(NONCE_BITS // 8, "big"),
                     self.r_j.to_bytes(NONCE_BITS // 8, "big"),
                     self.sig_i.to_bytes(), self.sig_j.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Mark":
        parts = _unpack(data)
        if len(parts) != 6 or parts[0] != MARK_TAG:
            raise ValueError("malformed mark")
        return cls(int.from_bytes(parts[1], "big", signed=True),
                   int.from_bytes(parts[2], "big"), int.from_bytes(parts[3], "big"),
                   Signature.from_bytes(parts[4]), Signature.from_bytes(parts[5]))


@dataclass(frozen=True)
class MarkReply:
    """Signed statement by ``responder`` of its latest mark with ``requester``."""
    responder: EntityId
    requester: EntityId
    mark: Mark | None
    sig: Signature

    @staticmethod
    def payload_for(responder: EntityId, requester: EntityId, mark: Mark | None) -> bytes:
        return _pack(REPLY_TAG, entity_bytes(responder), entity_bytes(requester),
                     mark.to_bytes() if mark is not None else b"")

    def payload(self) -> bytes:
        return self.payload_for(self.responder, self.requester, self.mark)

    def is_valid(self, pki: Authority) -> bool:
        if self.sig.signer != self.responder:
            return False
        if not pki.verify(self.payload(), self.sig, self.responder):
            return False
        if self.mark is None:
            return True
        return (self.mark.is_valid(pki)
                and set(self.mark.parties) == {self.responder, self.requester})


class MarkStore:
    """Latest completed mark per peer.  Only the protocol functions write it."""

    def __init__(self, owner: EntityId):
        self.owner = owner
        self._marks: dict[EntityId, Mark] = {}

    def get(self, peer: EntityId) -> Mark | None:
        return self._marks.get(peer)

    def _store(self, peer: EntityId, mark: Mark) -> None:
        self._marks[peer] = mark

    def peers(self) -> list[EntityId]:
        return sorted(self._marks)

    def copy(self) -> "MarkStore":
        other = MarkStore(self.owner)
        other._marks = dict(self._marks)
        return other

    def __len__(self) -> int:
        return len(self._marks)


@dataclass
class Device:
    """One physical device running the protocol under ``entity``'s credentials."""
    entity: EntityId
    key: PrivateKey = field(repr=False)
    store: MarkStore = None
    label: str = ""

    def __post_init__(self):
        if self.store is None:
            self.store = MarkStore(self.entity)

    def reply_to(self, requester: EntityId) -> MarkReply:
        mark = self.store.get(requester)
        payload = MarkReply.payload_for(self.entity, requester, mark)
        return MarkReply(self.entity, requester, mark, sign(payload, self.key))

    def clone(self, label: str = "clone") -> "Device":
        """Full copy of state and credentials, as an adversary would take it."""
        return Device(self.entity, self.key, self.store.copy(), label)


@dataclass(frozen=True)
class MarkConflictEvidence:
    """Two mutually inconsistent statements, each signed by ``accused``."""
    accused: EntityId
    detector: EntityId
    expected: MarkReply
    presented: MarkReply

    @property
    def kind(self) -> str:
        if self.expected.mark is None or self.presented.mark is None:
            return "mark-denial"
        return "mark-conflict"

    def conflict_reason(self, pki: Authority) -> str | None:
        pair = {self.accused, self.detector}
        if len(pair) != 2:
            return "accused and detector must differ"
        for reply in (self.expected, self.presented):
            if not reply.is_valid(pki):
                return "signature does not verify"
            if {reply.responder, reply.requester} != pair:
                return "statements concern a different pair"
            if reply.mark is None and reply.responder != self.accused:
                return "empty statement not signed by the accused"
        a, b = self.expected.mark, self.presented.mark
        if a is None and b is None:
            return "no mark in evidence"
        if a is not None and b is not None and a.to_bytes() == b.to_bytes():
            return "marks are consistent"
        return None


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    evidence: MarkConflictEvidence | None = None


def _age(mark: Mark | None) -> int | float:
    return float("-inf") if mark is None else mark.t


def mark_check(checker: EntityId, checked: EntityId, presented: MarkReply,
               expected: MarkReply, pki: Authority) -> CheckResult:
    """Compare the mark ``checked`` presents with the one ``checker`` holds.

    ``expected`` is the checker's own signed statement of its stored mark.
    Raises ProtocolViolation if the presented statement does not verify.
    """
    if presented.responder != checked or presented.requester != checker:
        raise ProtocolViolation("reply addressed to the wrong session")
    if not presented.is_valid(pki):
        raise ProtocolViolation(f"invalid mark reply from {checked}")
    if not expected.is_valid(pki):
        raise ProtocolViolation(f"checker {checker} holds an invalid mark")
    p, e = presented.mark, expected.mark
    if p is None and e is None:
        return CheckResult(True)
    if p is not None and e is not None and p.to_bytes() == e.to_bytes():
        return CheckResult(True)
    # whoever holds the older mark has a twin that missed an update
    if _age(e) < _age(p):
        accused, detector = checker, checked
    else:
        accused, detector = checked, checker
    return CheckResult(False, MarkConflictEvidence(accused, detector, expected, presented))


def mark_update(x: Device, y: Device, now: int, rng: random.Random,
                pki: Authority, interrupt_after: int | None = None) -> Mark | None:
    """Four-message mark exchange; the lower id plays initiator.

    Both stores are written only once the exchange completes.  Returns the new
    mark, or None if the exchange was interrupted or a signature failed.
    """
    i, j = (x, y) if x.entity < y.entity else (y, x)
    r_i = rng.getrandbits(NONCE_BITS)                       # 1: i -> j
    if interrupt_after == 1:
        return None
    r_j = rng.getrandbits(NONCE_BITS)
    payload = Mark.payload_for(now, r_i, r_j)
    sig_j = sign(payload, j.key)                            # 2: j -> i
    if not pki.verify(payload, sig_j, j.entity):
        log.debug("mark update aborted: bad signature from %s", j.entity)
        return None
    if interrupt_after == 2:
        return None
    sig_i = sign(payload, i.key)                            # 3: i -> j
    if not pki.verify(payload, sig_i, i.entity):
        log.debug("mark update aborted: bad signature from %s", i.entity)
        return None
    if interrupt_after == 3:
        return None
    mark = Mark(int(now), r_i, r_j, sig_i, sig_j)           # 4: j -> i OK
    i.store._store(j.entity, mark)
    j.store._store(i.entity, mark)
    return mark


@dataclass
class MeetingOutcome:
    time: int
    parties: tuple[EntityId, EntityId]
    first_meeting: bool = False
    checks: list[CheckResult] = field(default_factory=list)
    mark: Mark | None = None
    evidence: list[MarkConflictEvidence] = field(default_factory=list)
    revoked: list[EntityId] = field(default_factory=list)
    refused: bool = False
    skipped: bool = False

    @property
    def failed(self) -> bool:
        return bool(self.evidence)


def on_meeting(x: Device, y: Device, now: int, rng: random.Random, pki: Authority,
               refuse: bool = False) -> MeetingOutcome:
    """Run check-then-update for two community peers that just met."""
    out = MeetingOutcome(int(now), (x.entity, y.entity))
    if pki.is_revoked(x.entity) or pki.is_revoked(y.entity):
        out.skipped = True
        return out
    mx, my = x.store.get(y.entity), y.store.get(x.entity)
    if mx is None and my is None:
        out.first_meeting = True
        if refuse:
            out.refused = True
            return out
        out.mark = mark_update(x, y, now, rng, pki)
        return out
    if refuse:
        out.refused = True
        return out
    i, j = (x, y) if x.entity < y.entity else (y, x)
    reply_i, reply_j = i.reply_to(j.entity), j.reply_to(i.entity)
    out.checks.append(mark_check(i.entity, j.entity, reply_j, reply_i, pki))
    out.checks.append(mark_check(j.entity, i.entity, reply_i, reply_j, pki))
    # one evidence object per failed direction; the authority revokes each identity once
    out.evidence = [res.evidence for res in out.checks if not res.ok]
    for ev in out.evidence:
        try:
            revoked = pki.ca_revoke(ev, now).revoked
            if revoked not in out.revoked:
                out.revoked.append(revoked)
        except RevocationRejected as exc:
            log.warning("authority rejected evidence from %s: %s", ev.detector, exc)
    if not out.evidence:
        out.mark = mark_update(x, y, now, rng, pki)
    return out


class PersonalMarks:
    """Drives the protocol for a population of devices over a meeting stream.

    ``peers`` maps each entity to its Personal-Marks peer set; meetings between
    entities that are not peers are ignored.
    """

    def __init__(self, pki: Authority, peers: dict[EntityId, set], seed: int = 0):
        self.pki = pki
        self.peers = peers
        self.rng = random.Random(seed)
        self.devices: dict[EntityId, Device] = {}
        self.outcomes: list[MeetingOutcome] = []

    def device(self, entity: EntityId) -> Device:
        dev = self.devices.get(entity)
        if dev is None:
            dev = Device(entity, self.pki.private_key(entity))
            self.devices[entity] = dev
        return dev

    def are_peers(self, u: EntityId, v: EntityId) -> bool:
        return v in self.peers.get(u, ())

    def meet(self, x: Device, y: Device, now: int, refuse: bool = False) -> MeetingOutcome | None:
        if x.entity == y.entity or not self.are_peers(x.entity, y.entity):
            return None
        out = on_meeting(x, y, now, self.rng, self.pki, refuse)
        self.outcomes.append(out)
        return out

    def run(self, meetings: Iterable[tuple[EntityId, EntityId, int]]) -> list[MeetingOutcome]:
        results = []
        for u, v, t in meetings:
            out = self.meet(self.device(u), self.device(v), t)
            if out is not None:
                results.append(out)
        return results
