"""Node identities, simulated signatures and the trusted authority.

Signatures default to a keyed-MAC construction (HMAC-SHA256).  The scheme is
pluggable: anything implementing ``derive``/``sign_bytes``/``verify_bytes``
can be dropped into :class:`Authority`; :class:`Ed25519Scheme` is provided as
a real asymmetric alternative.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import hmac
import random
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol


class EntityKind(enum.Enum):
    MOBILE_NODE = "node"
    ACCESS_POINT = "ap"
    AUTHORITY = "ca"


@dataclass(frozen=True, order=True)
class EntityId:
    id: str
    kind: EntityKind = field(default=EntityKind.MOBILE_NODE, compare=False)

    def __str__(self) -> str:
        return self.id

    @classmethod
    def node(cls, name: str) -> "EntityId":
        return cls(name, EntityKind.MOBILE_NODE)

    @classmethod
    def ap(cls, name: str) -> "EntityId":
        return cls(name, EntityKind.ACCESS_POINT)


def _pack(*parts: bytes) -> bytes:
    return b"".join(struct.pack(">I", len(p)) + p for p in parts)


def _unpack(data: bytes) -> list[bytes]:
    out, pos = [], 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError("truncated length prefix")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise ValueError("truncated field")
        out.append(data[pos:pos + n])
        pos += n
    return out


def entity_bytes(e: EntityId) -> bytes:
    return _pack(e.id.encode(), e.kind.value.encode())


def entity_from_bytes(data: bytes) -> EntityId:
    ident, kind = _unpack(data)
    return EntityId(ident.decode(), EntityKind(kind.decode()))


@dataclass(frozen=True)
class PrivateKey:
    owner: EntityId
    material: bytes = field(repr=False)


@dataclass(frozen=True)
class PublicKey:
    owner: EntityId
    material: bytes = field(repr=False)

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.material).hexdigest()[:16]


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    private: PrivateKey


@dataclass(frozen=True)
class Signature:
    signer: EntityId
    digest: bytes
    value: bytes

    def to_bytes(self) -> bytes:
        return _pack(entity_bytes(self.signer), self.digest, self.value)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Signature":
        parts = _unpack(data)
        if len(parts) != 3:
            raise ValueError("malformed signature encoding")
        return cls(entity_from_bytes(parts[0]), parts[1], parts[2])


class SignatureScheme(Protocol):
    name: str

    def derive(self, owner: EntityId, seed: bytes) -> KeyPair: ...

    def sign_bytes(self, message: bytes, key: PrivateKey) -> bytes: ...

    def verify_bytes(self, message: bytes, value: bytes, key: PublicKey) -> bool: ...


class HmacScheme:
    """Simulated signatures: the verification material is the MAC secret.

    Unforgeability holds inside the simulation because adversary code paths
    never read ``PublicKey.material``.
    """

    name = "hmac-sha256"

    def derive(self, owner: EntityId, seed: bytes) -> KeyPair:
        secret = hashlib.sha256(b"key|" + seed + b"|" + entity_bytes(owner)).digest()
        return KeyPair(PublicKey(owner, secret), PrivateKey(owner, secret))

    def sign_bytes(self, message: bytes, key: PrivateKey) -> bytes:
        return hmac.new(key.material, message, hashlib.sha256).digest()

    def verify_bytes(self, message: bytes, value: bytes, key: PublicKey) -> bool:
        expected = hmac.new(key.material, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, value)


class Ed25519Scheme:
    name = "ed25519"

    def derive(self, owner: EntityId, seed: bytes) -> KeyPair:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
        from cryptography.hazmat.primitives import serialization

        raw = hashlib.sha256(b"ed25519|" + seed + b"|" + entity_bytes(owner)).digest()
        sk = Ed25519PrivateKey.from_private_bytes(raw)
        pk = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return KeyPair(PublicKey(owner, pk), PrivateKey(owner, raw))

    def sign_bytes(self, message: bytes, key: PrivateKey) -> bytes:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(key.material).sign(message)

    def verify_bytes(self, message: bytes, value: bytes, key: PublicKey) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(key.material).verify(value, message)
        except (InvalidSignature, ValueError):
            return False
        return True


DEFAULT_SCHEME: SignatureScheme = HmacScheme()

_KIND_PREFIX = {
    EntityKind.MOBILE_NODE: "n",
    EntityKind.ACCESS_POINT: "ap",
    EntityKind.AUTHORITY: "ca",
}


def generate_identity(kind: EntityKind = EntityKind.MOBILE_NODE,
                      seed: int | None = None,
                      rng: random.Random | None = None,
                      scheme: SignatureScheme = DEFAULT_SCHEME) -> tuple[EntityId, KeyPair]:
    """Create a fresh identity; identical ``seed`` gives identical id and keys."""
    if rng is None:
        rng = random.Random(seed)
    entity = EntityId(f"{_KIND_PREFIX[kind]}-{rng.getrandbits(64):016x}", kind)
    return entity, scheme.derive(entity, rng.getrandbits(256).to_bytes(32, "big"))


def sign(payload: bytes, key: PrivateKey,
         scheme: SignatureScheme = DEFAULT_SCHEME) -> Signature:
    digest = hashlib.sha256(payload).digest()
    value = scheme.sign_bytes(entity_bytes(key.owner) + digest, key)
    return Signature(key.owner, digest, value)


def verify(payload: bytes, sig: Signature | bytes | None, key: PublicKey,
           scheme: SignatureScheme = DEFAULT_SCHEME) -> bool:
    """True iff ``sig`` is a signature by ``key.owner`` over ``payload``.

    Malformed input of any kind yields False.
    """
    try:
        if isinstance(sig, (bytes, bytearray)):
            sig = Signature.from_bytes(bytes(sig))
        if not isinstance(sig, Signature) or sig.signer != key.owner:
            return False
        if sig.signer.kind != key.owner.kind:
            return False
        digest = hashlib.sha256(payload).digest()
        if not hmac.compare_digest(digest, sig.digest):
            return False
        return scheme.verify_bytes(entity_bytes(sig.signer) + digest, sig.value, key)
    except (ValueError, TypeError, struct.error, UnicodeDecodeError):
        return False


class RevocationRejected(Exception):
    """Evidence submitted to the authority did not prove a clone."""


class Evidence(Protocol):
    kind: str

    @property
    def accused(self) -> EntityId: ...

    def conflict_reason(self, pki: "Authority") -> str | None:
        """None if the evidence proves a conflict, otherwise why not."""


@dataclass(frozen=True)
class Revocation:
    revoked: EntityId
    evidence: object
    time: int

    @property
    def evidence_kind(self) -> str:
        return getattr(self.evidence, "kind", type(self.evidence).__name__)


class Authority:
    """Trusted CA: key registry, revocation list and out-of-band broadcast.

    The registry is fixed once :meth:`freeze` is called.  The revocation list
    is append-only; readers get tuple snapshots so they never see a partially
    applied append.
    """

    def __init__(self, seed: int = 0, scheme: SignatureScheme = DEFAULT_SCHEME,
                 name: str = "ca"):
        self.scheme = scheme
        self._seed = seed.to_bytes(16, "big", signed=True)
        self.entity = EntityId(name, EntityKind.AUTHORITY)
        self.keys = scheme.derive(self.entity, self._seed)
        self._registry: dict[EntityId, KeyPair] = {self.entity: self.keys}
        self._frozen = False
        self._lock = threading.Lock()
        self._revocations: tuple[Revocation, ...] = ()
        self._revoked: frozenset[EntityId] = frozenset()
        self._listeners: list[Callable[[Revocation], None]] = []

    def enroll(self, entity: EntityId) -> KeyPair:
        """Deterministic keys for ``entity`` (derived from the CA seed and the id)."""
        if entity in self._registry:
            return self._registry[entity]
        if self._frozen:
            raise RuntimeError("identity registry is frozen")
        kp = self.scheme.derive(entity, self._seed)
        self._registry[entity] = kp
        return kp

    def enroll_all(self, entities: Iterable[EntityId]) -> "Authority":
        for e in entities:
            self.enroll(e)
        return self

    def freeze(self) -> "Authority":
        self._frozen = True
        return self

    def public_key(self, entity: EntityId) -> PublicKey:
        try:
            return self._registry[entity].public
        except KeyError:
            raise KeyError(f"unknown entity {entity}") from None

    def private_key(self, entity: EntityId) -> PrivateKey:
        # handed to the device at enrollment; simulation-side accessor only
        return self._registry[entity].private

    def knows(self, entity: EntityId) -> bool:
        return entity in self._registry

    def sign(self, payload: bytes, entity: EntityId) -> Signature:
        return sign(payload, self.private_key(entity), self.scheme)

    def verify(self, payload: bytes, sig: Signature | bytes | None,
               entity: EntityId) -> bool:
        if not isinstance(sig, (Signature, bytes, bytearray)):
            return False
        try:
            key = self.public_key(entity)
        except KeyError:
            return False
        return verify(payload, sig, key, self.scheme)

    # -- revocation ---------------------------------------------------------

    def subscribe(self, callback: Callable[[Revocation], None]) -> None:
        self._listeners.append(callback)

    def ca_revoke(self, evidence: Evidence, now: int) -> Revocation:
        reason = evidence.conflict_reason(self)
        if reason is not None:
            raise RevocationRejected(reason)
        accused = evidence.accused
        with self._lock:
            for r in self._revocations:
                if r.revoked == accused:
                    return r
            rev = Revocation(accused, evidence, int(now))
            self._revocations = self._revocations + (rev,)
            self._revoked = self._revoked | {accused}
        for cb in self._listeners:
            cb(rev)
        return rev

    def is_revoked(self, entity: EntityId) -> bool:
        return entity in self._revoked

    @property
    def revocations(self) -> tuple[Revocation, ...]:
        return self._revocations

    def export_revocations(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "revoked_id", "evidence_kind"])
            for r in self._revocations:
                w.writerow([r.time, r.revoked.id, r.evidence_kind])
