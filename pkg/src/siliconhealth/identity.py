"""Patient identity: pseudonyms, QR card payloads, family links, demographic lookup.

Demographic mappings may only live on tier >= 2 nodes; the store refuses
to exist anywhere else.
"""

import base64
import enum
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .errors import SiliconHealthError
from .hashcore import sha256

PEPPER_LEN = 32
QR_VERSION = 1
QR_LEN = 53
_QR_BODY = struct.Struct(">B32s8sQ")
MIN_IDENTITY_TIER = 2
MAX_GUARDIANS = 2


class IdentityError(SiliconHealthError):
    pass


class EmptyTemplate(IdentityError):
    pass


class ChecksumError(IdentityError):
    pass


class CycleDetected(IdentityError):
    pass


class GuardianLimit(IdentityError):
    pass


class TierViolation(IdentityError):
    pass


def derive_pseudonym(template: bytes, pepper: bytes) -> bytes:
    if not template:
        raise EmptyTemplate("biometric template is empty")
    if len(pepper) != PEPPER_LEN:
        raise ValueError(f"pepper must be {PEPPER_LEN} bytes")
    return sha256(pepper + template)


@dataclass(frozen=True)
class QrCardPayload:
    version: int
    pseudonym: bytes
    facility_id: bytes
    issue_date: int

    def to_bytes(self) -> bytes:
        body = _QR_BODY.pack(self.version, self.pseudonym, self.facility_id, self.issue_date)
        return body + sha256(body)[:4]

    @classmethod
    def from_bytes(cls, raw: bytes) -> "QrCardPayload":
        if len(raw) != QR_LEN:
            raise ChecksumError(f"QR payload must be {QR_LEN} bytes, got {len(raw)}")
        body, check = raw[:-4], raw[-4:]
        if sha256(body)[:4] != check:
            raise ChecksumError("QR checksum mismatch")
        return cls(*_QR_BODY.unpack(body))

    def to_text(self, encoding: str = "base32") -> str:
        raw = self.to_bytes()
        if encoding == "base32":
            return base64.b32encode(raw).decode().rstrip("=")
        if encoding == "hex":
            return raw.hex()
        raise ValueError("encoding must be 'base32' or 'hex'")

    @classmethod
    def from_text(cls, text: str) -> "QrCardPayload":
        text = text.strip()
        if len(text) == 2 * QR_LEN and all(c in "0123456789abcdefABCDEF" for c in text):
            return cls.from_bytes(bytes.fromhex(text))
        padded = text.upper() + "=" * (-len(text) % 8)
        try:
            return cls.from_bytes(base64.b32decode(padded))
        except ValueError as exc:
            raise ChecksumError(f"unreadable QR text: {exc}") from None


def issue_qr(pseudonym: bytes, facility_id: bytes, issue_date: int) -> QrCardPayload:
    if len(pseudonym) != 32 or len(facility_id) != 8:
        raise ValueError("pseudonym must be 32 bytes and facility_id 8 bytes")
    return QrCardPayload(QR_VERSION, pseudonym, facility_id, issue_date)


def parse_qr(raw: bytes) -> QrCardPayload:
    return QrCardPayload.from_bytes(raw)


class Relation(enum.IntEnum):
    MOTHER = 1
    FATHER = 2
    GUARDIAN = 3


class FamilyGraph:
    """Child -> guardian edges.  Acyclic, at most two guardians per child."""

    def __init__(self):
        self._guardians: Dict[bytes, List[Tuple[bytes, Relation]]] = {}

    def guardians(self, child: bytes) -> List[Tuple[bytes, Relation]]:
        return list(self._guardians.get(child, ()))

    def edges(self):
        for child in sorted(self._guardians):
            for guardian, relation in self._guardians[child]:
                yield child, guardian, relation

    def _ancestors(self, start: bytes):
        seen, stack = set(), [start]
        while stack:
            for g, _ in self._guardians.get(stack.pop(), ()):
                if g not in seen:
                    seen.add(g)
                    stack.append(g)
        return seen

    def link_family(self, child: bytes, guardian: bytes, relation: Relation) -> "FamilyGraph":
        if child == guardian or child in self._ancestors(guardian):
            raise CycleDetected("linking would make a patient their own ancestor")
        current = self._guardians.get(child, [])
        if any(g == guardian for g, _ in current):
            return self
        if len(current) >= MAX_GUARDIANS:
            raise GuardianLimit(f"child already has {MAX_GUARDIANS} guardians")
        self._guardians[child] = current + [(guardian, Relation(relation))]
        return self

    def household(self, member: bytes) -> List[bytes]:
        """Everyone connected to ``member`` through stored edges, in either direction."""
        adjacent: Dict[bytes, set] = {}
        for c, g, _ in self.edges():
            adjacent.setdefault(c, set()).add(g)
            adjacent.setdefault(g, set()).add(c)
        seen, stack = {member}, [member]
        while stack:
            for nxt in adjacent.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return sorted(seen)

    def to_bytes(self) -> bytes:
        return b"".join(c + g + bytes([int(r)]) for c, g, r in self.edges())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "FamilyGraph":
        graph = cls()
        for i in range(0, len(raw), 65):
            graph.link_family(raw[i:i + 32], raw[i + 32:i + 64], Relation(raw[i + 64]))
        return graph


@dataclass(frozen=True)
class Demographics:
    name: str
    birth_year: int
    village_code: str


@dataclass(frozen=True)
class Candidate:
    pseudonym: bytes
    score: float
    matched: Tuple[str, ...]
    uncertain: bool


class IdentityStore:
    """Pseudonym -> demographics, usable only on tier >= 2 nodes."""

    def __init__(self, tier: int):
        if tier < MIN_IDENTITY_TIER:
            raise TierViolation(f"identity mappings cannot be held at tier {tier}")
        self.tier = tier
        self._entries: Dict[bytes, Demographics] = {}

    def add(self, pseudonym: bytes, demographics: Demographics):
        self._entries[pseudonym] = demographics

    def __len__(self):
        return len(self._entries)

    def items(self):
        return sorted(self._entries.items())

    def to_bytes(self) -> bytes:
        out = []
        for p, d in self.items():
            name, village = d.name.encode(), d.village_code.encode()
            out.append(p + struct.pack(">H", len(name)) + name + struct.pack(">HH", d.birth_year, len(village))
                       + village)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, raw: bytes, tier: int) -> "IdentityStore":
        store, pos = cls(tier), 0
        while pos < len(raw):
            p = raw[pos:pos + 32]
            (n,) = struct.unpack_from(">H", raw, pos + 32)
            name = raw[pos + 34:pos + 34 + n].decode()
            year, m = struct.unpack_from(">HH", raw, pos + 34 + n)
            village = raw[pos + 38 + n:pos + 38 + n + m].decode()
            store.add(p, Demographics(name, year, village))
            pos += 38 + n + m
        return store


def _score(query: dict, d: Demographics):
    score, matched, exact = 0.0, [], 0
    if query.get("name") is not None and query["name"].casefold() == d.name.casefold():
        score, exact = score + 1, exact + 1
        matched.append("name")
    if query.get("village_code") is not None and query["village_code"] == d.village_code:
        score, exact = score + 1, exact + 1
        matched.append("village_code")
    year = query.get("birth_year")
    if year is not None:
        if year == d.birth_year:
            score, exact = score + 1, exact + 1
            matched.append("birth_year")
        elif abs(year - d.birth_year) == 1:
            score += 0.5
            matched.append("birth_year~")
    return score, tuple(matched), exact


def demographic_match(query: dict, store: IdentityStore, node_tier: Optional[int] = None) -> List[Candidate]:
    """Rank stored identities by field agreement.

    Exact field = 1, birth year off by one = 0.5.  A result is certain only
    if every provided field matches exactly and no other candidate does.
    """
    tier = store.tier if node_tier is None else node_tier
    if tier < MIN_IDENTITY_TIER:
        raise TierViolation(f"demographic matching is not available at tier {tier}")
    provided = sum(query.get(k) is not None for k in ("name", "birth_year", "village_code"))
    scored = []
    for p, d in store.items():
        score, matched, exact = _score(query, d)
        if score > 0:
            scored.append((p, score, matched, provided > 0 and exact == provided))
    full = [s for s in scored if s[3]]
    scored.sort(key=lambda s: (-s[1], s[0]))
    return [Candidate(p, score, matched, not (is_full and len(full) == 1))
            for p, score, matched, is_full in scored]
