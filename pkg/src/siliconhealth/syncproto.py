"""Merkle-diff synchronization between two facility ledgers.

Session shape (A initiates, B answers; every frame carries an AuthTag):

1. RootHello both ways with the 32-byte ledger roots.  Equal roots end the
   session right there.
2. A lists its facility subtrees (id, leaf count, subtree root).  B answers
   with per-facility verdicts, its own counts and the facilities A lacks.
3. Both sides descend the per-facility trees in lockstep.  Nodes are read
   with :func:`merkle.aligned_node`, so trees of different sizes line up.
   Each message carries verdicts on the digests just received plus the
   sender's child digests of every node it found different.  Ranges held by
   one side only are marked different without any digest traffic.
4. The side that sends the first digest-free message attaches its
   inventory (leaf + priority key for each differing position it holds); the
   other side answers with its own.
5. Records are transferred in one merged priority queue, each answered by
   an Ack, then both sides send Done with their final root.

Body layouts are documented next to the encoders below.
"""

import enum
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .errors import SiliconHealthError
from .ledger import (KNOWN, NEW, SUPERSEDED, UPDATED, AuditEntry, Ledger, LedgerError, Version,
                     ZERO_DIGEST)
from .merkle import aligned_node, node_hash, tree_depth
from .records import HealthRecord, decode_record, encode_record
from .dhf import PROOF_LEN, DhfProof
from .session import DEFAULT_SKEW, TAG_LEN, AuthTag, ReplayCache, SessionKey, open_session, \
    sign_transaction, verify_transaction

FRAME_HEADER = 5
FRAME_OVERHEAD = FRAME_HEADER + TAG_LEN
INVENTORY_ENTRY = 32 + 1 + 8 + 2 + 16 + 8 + 8

_U32 = struct.Struct(">I")


class MessageKind(enum.IntEnum):
    ROOT_HELLO = 1
    BRANCH_QUERY = 2
    BRANCH_REPLY = 3
    RECORD_TRANSFER = 4
    ACK = 5
    DONE = 6


class AckStatus(enum.IntEnum):
    ACCEPTED = 0
    DUPLICATE = 1
    LOST_CONFLICT = 2
    QUARANTINED = 3


_MERGE_STATUS = {NEW: AckStatus.ACCEPTED, UPDATED: AckStatus.ACCEPTED,
                 KNOWN: AckStatus.DUPLICATE, SUPERSEDED: AckStatus.LOST_CONFLICT}

PHASE_LISTING = 0
PHASE_LISTING_REPLY = 1
PHASE_DESCENT = 2
PHASE_INVENTORY = 3


class SyncError(SiliconHealthError):
    report: Optional["SyncReport"] = None


class WindowClosed(SyncError):
    pass


class MessageLost(SyncError):
    pass


class Interrupted(SyncError):
    """Scripted cut at a message boundary (tests and resumability checks)."""


class AuthFailed(SyncError):
    pass


class IncompatibleTree(SyncError):
    pass


class OrphanFacility(SyncError):
    pass


# -- framing ------------------------------------------------------------

@dataclass(frozen=True)
class SyncMessage:
    kind: MessageKind
    body: bytes
    auth: AuthTag

    @property
    def signed_part(self) -> bytes:
        return encode_frame(self.kind, self.body)

    def to_bytes(self) -> bytes:
        return self.signed_part + self.auth.to_bytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SyncMessage":
        if len(raw) < FRAME_OVERHEAD:
            raise SyncError("truncated frame")
        kind = raw[0]
        (n,) = _U32.unpack_from(raw, 1)
        if len(raw) != FRAME_OVERHEAD + n:
            raise SyncError("frame length mismatch")
        try:
            kind = MessageKind(kind)
        except ValueError:
            raise SyncError(f"unknown message kind {kind}") from None
        return cls(kind, raw[FRAME_HEADER:FRAME_HEADER + n], AuthTag.from_bytes(raw[FRAME_HEADER + n:]))


def encode_frame(kind: MessageKind, body: bytes) -> bytes:
    return bytes([int(kind)]) + _U32.pack(len(body)) + body


# -- priority -----------------------------------------------------------

def priority_key(record: HealthRecord):
    """Emergency, then referral-pending, then oldest created, then youngest patient, then id."""
    return (not record.emergency, not record.referral_pending, record.created_at,
            -record.patient_birth_year, record.record_id)


def priority_order(records: Sequence[HealthRecord]) -> List[HealthRecord]:
    return sorted(records, key=priority_key)


@dataclass(frozen=True)
class InventoryEntry:
    leaf: bytes
    flags: int
    created_at: int
    birth_year: int
    record_id: bytes
    edited_at: int = 0
    editor_device: bytes = bytes(8)

    @classmethod
    def of(cls, version: Version) -> "InventoryEntry":
        r = version.record
        return cls(version.leaf, r.flags, r.created_at, r.patient_birth_year, r.record_id,
                   version.edited_at, version.editor_device)

    @property
    def key(self):
        return (not self.flags & 1, not self.flags & 2, self.created_at, -self.birth_year, self.record_id)

    @property
    def lww_key(self):
        return (self.edited_at, self.editor_device, self.leaf)

    def to_bytes(self) -> bytes:
        return (self.leaf + struct.pack(">BQH", self.flags, self.created_at, self.birth_year) + self.record_id
                + struct.pack(">Q", self.edited_at) + self.editor_device)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "InventoryEntry":
        flags, created, birth = struct.unpack_from(">BQH", raw, 32)
        (edited,) = struct.unpack_from(">Q", raw, 59)
        return cls(raw[:32], flags, created, birth, raw[43:59], edited, raw[67:75])


# -- conflict resolution ------------------------------------------------

def resolve_conflict(local: Version, remote: Version) -> Tuple[Version, List[AuditEntry]]:
    """Pick the LWW winner of two versions of one record.

    The key is (edited_at, editor_device), with the leaf as a final
    tie-break so the choice never depends on which side is "local".  The
    returned audit entries chain both versions in key order; identical
    leaves are a no-op with no entries.
    """
    if local.record.record_id != remote.record.record_id:
        raise ValueError("versions belong to different records")
    if local.leaf == remote.leaf:
        return local, []
    first, second = sorted((local, remote), key=lambda v: v.key)
    rid = local.record.record_id
    entries = [AuditEntry(rid, 1, first.editor_device, first.edited_at, ZERO_DIGEST, first.leaf),
               AuditEntry(rid, 2, second.editor_device, second.edited_at, first.leaf, second.leaf)]
    return second, entries


# -- tree descent -------------------------------------------------------

Node = Tuple[bytes, int, int]  # (facility, level, index)


class _Descent:
    """One side's view of the lockstep diff.  Both sides run identical bookkeeping."""

    def __init__(self, ledger: Ledger):
        self.ledger = ledger
        self.own: Dict[bytes, int] = {f: ledger.facility_count(f) for f in ledger.facilities()}
        self.peer: Dict[bytes, int] = {}
        self.pending: List[Node] = []
        self.diff: Dict[bytes, Set[int]] = {}
        self._listed: List[Tuple[bytes, int, bytes]] = []

    def _depth(self, f: bytes) -> int:
        return max(tree_depth(c) for c in (self.own.get(f, 0), self.peer.get(f, 0)) if c)

    def _mark(self, f: bytes, lo: int, hi: int):
        if hi > lo:
            self.diff.setdefault(f, set()).update(range(lo, hi))

    def _digest(self, node: Node) -> bytes:
        f, level, index = node
        return aligned_node(self.ledger.facility_tree(f), level, index)

    def _expand(self, nodes: Sequence[Node]) -> List[Node]:
        out = []
        for f, level, index in nodes:
            if level == 0:
                self._mark(f, index, index + 1)
                continue
            lo_count = min(self.own.get(f, 0), self.peer.get(f, 0))
            hi_count = max(self.own.get(f, 0), self.peer.get(f, 0))
            for c in (2 * index, 2 * index + 1):
                lo = c << (level - 1)
                if lo >= hi_count:
                    continue
                if lo >= lo_count:
                    self._mark(f, lo, min((c + 1) << (level - 1), hi_count))
                else:
                    out.append((f, level - 1, c))
        return out

    def _compare(self, expected: List[Node], digests: Sequence[bytes]):
        if len(expected) != len(digests):
            raise IncompatibleTree(f"expected {len(expected)} digests, got {len(digests)}")
        verdicts = [self._digest(n) != d for n, d in zip(expected, digests)]
        self.pending = self._expand([n for n, v in zip(expected, verdicts) if v])
        return verdicts, [self._digest(n) for n in self.pending]

    # initiator
    def listing(self) -> List[Tuple[bytes, int, bytes]]:
        self._listed = [(f, c, self.ledger.facility_tree(f).root) for f, c in sorted(self.own.items())]
        return self._listed

    # responder
    def answer_listing(self, entries):
        verdicts, counts, tops = [], [], []
        for f, c, root in entries:
            self.peer[f] = c
            mine = self.own.get(f, 0)
            if mine == 0:
                verdicts.append(True)
                counts.append(0)
                self._mark(f, 0, c)
                continue
            top = self._depth(f)
            peer_top = root
            for _ in range(top - tree_depth(c)):
                peer_top = node_hash(peer_top, peer_top)
            differs = mine != c or peer_top != self._digest((f, top, 0))
            verdicts.append(differs)
            if differs:
                counts.append(mine)
                tops.append((f, top, 0))
        extras = [(f, c) for f, c in sorted(self.own.items()) if f not in self.peer]
        for f, c in extras:
            self.peer[f] = 0
            self._mark(f, 0, c)
        self.pending = self._expand(tops)
        return verdicts, counts, extras, [self._digest(n) for n in self.pending]

    # initiator
    def on_listing_reply(self, verdicts, counts, extras, digests):
        if len(verdicts) != len(self._listed):
            raise IncompatibleTree("facility verdict count mismatch")
        counts = iter(counts)
        tops = []
        for (f, c, _), differs in zip(self._listed, verdicts):
            if not differs:
                self.peer[f] = c
                continue
            theirs = next(counts)
            self.peer[f] = theirs
            if theirs == 0:
                self._mark(f, 0, c)
            else:
                tops.append((f, self._depth(f), 0))
        for f, c in extras:
            if f in self.own:
                raise IncompatibleTree("peer reported a listed facility as missing")
            self.peer[f] = c
            self._mark(f, 0, c)
        return self._compare(self._expand(tops), digests)

    def on_descent(self, verdicts, digests):
        if len(verdicts) != len(self.pending):
            raise IncompatibleTree("verdict count mismatch")
        differing = [n for n, v in zip(self.pending, verdicts) if v]
        return self._compare(self._expand(differing), digests)

    def inventory(self) -> List[InventoryEntry]:
        out = []
        for f in sorted(self.diff):
            count = self.own.get(f, 0)
            for p in sorted(self.diff[f]):
                if p < count:
                    out.append(InventoryEntry.of(self.ledger.version_at(f, p)))
        return out


def _outgoing(own_inv: Sequence[InventoryEntry], peer_inv: Sequence[InventoryEntry]):
    """Entries the peer lacks, minus versions the peer already supersedes."""
    peer_leaves = {e.leaf for e in peer_inv}
    peer_best = {}
    for e in peer_inv:
        if e.record_id not in peer_best or e.lww_key > peer_best[e.record_id]:
            peer_best[e.record_id] = e.lww_key
    return [e for e in own_inv
            if e.leaf not in peer_leaves and (e.record_id not in peer_best or e.lww_key > peer_best[e.record_id])]


def transfer_queue(inv_a: Sequence[InventoryEntry], inv_b: Sequence[InventoryEntry],
                   direction: str = "both") -> List[Tuple[str, InventoryEntry]]:
    """Merged send order for both sides: ("A"|"B", entry) sorted by record priority."""
    items = [("A", e) for e in _outgoing(inv_a, inv_b)]
    if direction == "both":
        items += [("B", e) for e in _outgoing(inv_b, inv_a)]
    elif direction != "push":
        raise ValueError(f"direction must be 'both' or 'push', not {direction!r}")
    return sorted(items, key=lambda item: (item[1].key, item[0]))


# -- body codecs --------------------------------------------------------

def _bitmap(bits: Sequence[bool]) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i >> 3] |= 0x80 >> (i & 7)
    return _U32.pack(len(bits)) + bytes(out)


def _read_bitmap(buf: memoryview, pos: int):
    (n,) = _U32.unpack_from(buf, pos)
    pos += 4
    raw = bytes(buf[pos:pos + (n + 7) // 8])
    bits = [bool(raw[i >> 3] & (0x80 >> (i & 7))) for i in range(n)]
    return bits, pos + (n + 7) // 8


def _digests(ds: Sequence[bytes]) -> bytes:
    return _U32.pack(len(ds)) + b"".join(ds)


def _read_digests(buf: memoryview, pos: int):
    (n,) = _U32.unpack_from(buf, pos)
    pos += 4
    return [bytes(buf[pos + 32 * i:pos + 32 * (i + 1)]) for i in range(n)], pos + 32 * n


def _inventory(inv: Optional[Sequence[InventoryEntry]]) -> bytes:
    if inv is None:
        return b"\x00"
    return b"\x01" + _U32.pack(len(inv)) + b"".join(e.to_bytes() for e in inv)


def _read_inventory(buf: memoryview, pos: int):
    present = buf[pos]
    pos += 1
    if not present:
        return None, pos
    (n,) = _U32.unpack_from(buf, pos)
    pos += 4
    inv = [InventoryEntry.from_bytes(bytes(buf[pos + INVENTORY_ENTRY * i:pos + INVENTORY_ENTRY * (i + 1)]))
           for i in range(n)]
    return inv, pos + INVENTORY_ENTRY * n


def encode_listing(entries) -> bytes:
    """phase 0 | u32 n | n x (facility 8 | count u32 | subtree root 32)"""
    return bytes([PHASE_LISTING]) + _U32.pack(len(entries)) + b"".join(
        f + _U32.pack(c) + r for f, c, r in entries)


def decode_listing(body: bytes):
    buf = memoryview(body)
    if buf[0] != PHASE_LISTING:
        raise SyncError("expected facility listing")
    (n,) = _U32.unpack_from(buf, 1)
    pos = 5
    out = []
    for _ in range(n):
        out.append((bytes(buf[pos:pos + 8]), _U32.unpack_from(buf, pos + 8)[0], bytes(buf[pos + 12:pos + 44])))
        pos += 44
    return out


def encode_listing_reply(verdicts, counts, extras, digests, inventory) -> bytes:
    """phase 1 | verdict bitmap | u32 x counts of differing facilities | u32 n | n x (facility 8 | count u32)
    | digest block | inventory block"""
    return (bytes([PHASE_LISTING_REPLY]) + _bitmap(verdicts) + b"".join(_U32.pack(c) for c in counts)
            + _U32.pack(len(extras)) + b"".join(f + _U32.pack(c) for f, c in extras)
            + _digests(digests) + _inventory(inventory))


def decode_listing_reply(body: bytes):
    buf = memoryview(body)
    if buf[0] != PHASE_LISTING_REPLY:
        raise SyncError("expected listing reply")
    verdicts, pos = _read_bitmap(buf, 1)
    counts = []
    for _ in range(sum(verdicts)):
        counts.append(_U32.unpack_from(buf, pos)[0])
        pos += 4
    (n,) = _U32.unpack_from(buf, pos)
    pos += 4
    extras = []
    for _ in range(n):
        extras.append((bytes(buf[pos:pos + 8]), _U32.unpack_from(buf, pos + 8)[0]))
        pos += 12
    digests, pos = _read_digests(buf, pos)
    inventory, _ = _read_inventory(buf, pos)
    return verdicts, counts, extras, digests, inventory


def encode_descent(verdicts, digests, inventory) -> bytes:
    """phase 2 | verdict bitmap | digest block | inventory block"""
    return bytes([PHASE_DESCENT]) + _bitmap(verdicts) + _digests(digests) + _inventory(inventory)


def decode_descent(body: bytes):
    buf = memoryview(body)
    if buf[0] == PHASE_INVENTORY:
        inventory, _ = _read_inventory(buf, 1)
        return None, None, inventory
    if buf[0] != PHASE_DESCENT:
        raise SyncError("expected descent message")
    verdicts, pos = _read_bitmap(buf, 1)
    digests, pos = _read_digests(buf, pos)
    inventory, _ = _read_inventory(buf, pos)
    return verdicts, digests, inventory


def encode_inventory(inventory) -> bytes:
    """phase 3 | inventory block"""
    return bytes([PHASE_INVENTORY]) + _inventory(inventory)


def encode_transfer(version: Version) -> bytes:
    """u32 record length | canonical record | 136-byte proof"""
    enc = encode_record(version.record)
    return _U32.pack(len(enc)) + enc + version.proof.to_bytes()


def decode_transfer(body: bytes) -> Tuple[HealthRecord, DhfProof]:
    (n,) = _U32.unpack_from(body)
    if len(body) != 4 + n + PROOF_LEN:
        raise SyncError("malformed record transfer")
    return decode_record(body[4:4 + n]), DhfProof.from_bytes(body[4 + n:])


def encode_ack(record_id: bytes, status: AckStatus) -> bytes:
    """record_id 16 | status u8"""
    return record_id + bytes([int(status)])


# -- endpoints and transport -------------------------------------------

class SyncEndpoint:
    """A ledger plus the device that signs its sync traffic."""

    def __init__(self, ledger: Ledger, device, rng, clock_offset: float = 0.0,
                 skew_allowance: float = DEFAULT_SKEW, name: Optional[str] = None):
        self.ledger = ledger
        self.device = device
        self.rng = rng
        self.clock_offset = clock_offset
        self.skew_allowance = skew_allowance
        self.name = name or ledger.facility_id.hex()
        self.replay_cache = ReplayCache()
        self._key: Optional[SessionKey] = None

    def local_time(self, t: float) -> float:
        return t + self.clock_offset

    def begin_session(self):
        self._key = None

    def sign(self, frame: bytes, t: float) -> AuthTag:
        now = self.local_time(t)
        if self._key is None or not self._key.valid_at(now):
            self._key = open_session(self.device, now, self.rng)
        return sign_transaction(self._key, frame, now)

    def verify(self, message: SyncMessage, peer, t: float):
        secret = self.ledger.registry.get(peer.device.device_id)
        if secret is None:
            raise AuthFailed(f"peer device {peer.device.device_id.hex()} is not registered")
        now = self.local_time(t)
        verdict = verify_transaction(secret.device_secret, message.signed_part, message.auth, now,
                                     self.replay_cache, clock_skew=self.skew_allowance)
        if not verdict:
            raise AuthFailed(verdict.reason)
        self.replay_cache.evict(now)


@dataclass(frozen=True)
class Delivery:
    time: float
    sender: str
    nbytes: int
    kind: int
    lost: bool


class Channel:
    """Half-duplex link carrying whole frames.

    A frame is only started if it can finish before ``window_end``; frames
    that would overrun raise :class:`WindowClosed` without touching the
    wire.  ``cut_after`` aborts before the given number of frames has been
    carried, modelling an interruption at a message boundary.
    """

    def __init__(self, bandwidth_bps: Optional[float] = None, latency: float = 0.0,
                 window_end: float = float("inf"), loss: float = 0.0, rng=None,
                 start: float = 0.0, cut_after: Optional[int] = None):
        if loss and rng is None:
            raise ValueError("a lossy channel needs a random source")
        self.bandwidth_bps = bandwidth_bps
        self.latency = latency
        self.window_end = window_end
        self.loss = loss
        self.rng = rng
        self.now = start
        self.start = start
        self.cut_after = cut_after
        self.log: List[Delivery] = []
        self.transcript: List[Tuple[str, bytes]] = []

    def airtime(self, nbytes: int) -> float:
        return self.latency + (8 * nbytes / self.bandwidth_bps if self.bandwidth_bps else 0.0)

    def carry(self, sender: str, raw: bytes) -> float:
        if self.cut_after is not None and len(self.log) >= self.cut_after:
            raise Interrupted(f"cut after {self.cut_after} messages")
        end = self.now + self.airtime(len(raw))
        if end > self.window_end:
            raise WindowClosed(f"{len(raw)}-byte frame does not fit before window end")
        self.now = end
        lost = bool(self.loss) and self.rng.random() < self.loss
        self.log.append(Delivery(end, sender, len(raw), raw[0], lost))
        self.transcript.append((sender, raw))
        if lost:
            raise MessageLost(f"frame of kind {raw[0]} dropped")
        return end

    def bytes_from(self, sender: str, since: int = 0) -> int:
        return sum(d.nbytes for d in self.log[since:] if d.sender == sender)


@dataclass
class SyncReport:
    bytes_sent: int = 0
    bytes_received: int = 0
    body_bytes_sent: int = 0
    body_bytes_received: int = 0
    records_transferred: int = 0
    records_sent: int = 0
    records_received: int = 0
    quarantined: int = 0
    rounds: int = 0
    messages: int = 0
    converged: bool = False
    duration_seconds: float = 0.0
    error: Optional[str] = None
    # (record_id, arrival time, "A>B" or "B>A", ack status) per transfer
    transfers: List[Tuple[bytes, float, str, AckStatus]] = field(default_factory=list)

    @property
    def transferred_ids(self) -> List[bytes]:
        return [t[0] for t in self.transfers]


class _Session:
    def __init__(self, a: SyncEndpoint, b: SyncEndpoint, channel: Channel):
        self.a, self.b, self.channel = a, b, channel
        self.report = SyncReport()
        self._first = len(channel.log)
        self._start = channel.now

    def send(self, sender: SyncEndpoint, kind: MessageKind, body: bytes) -> bytes:
        receiver = self.b if sender is self.a else self.a
        frame = encode_frame(kind, body)
        raw = frame + sender.sign(frame, self.channel.now).to_bytes()
        if sender is self.a:
            self.report.body_bytes_sent += len(body)
        else:
            self.report.body_bytes_received += len(body)
        arrival = self.channel.carry("A" if sender is self.a else "B", raw)
        message = SyncMessage.from_bytes(raw)
        receiver.verify(message, sender, arrival)
        if message.kind != kind:
            raise SyncError("frame kind changed in transit")
        if kind == MessageKind.BRANCH_QUERY:
            self.report.rounds += 1
        return message.body

    def finish(self):
        r = self.report
        r.bytes_sent = self.channel.bytes_from("A", self._first)
        r.bytes_received = self.channel.bytes_from("B", self._first)
        r.messages = len(self.channel.log) - self._first
        r.duration_seconds = self.channel.now - self._start
        return r

    def deliver(self, sender: SyncEndpoint, receiver: SyncEndpoint, version: Version):
        body = self.send(sender, MessageKind.RECORD_TRANSFER, encode_transfer(version))
        arrival = self.channel.now
        try:
            record, proof = decode_transfer(body)
            status = _MERGE_STATUS[receiver.ledger.merge_version(record, proof)]
        except (LedgerError, SyncError, SiliconHealthError) as exc:
            receiver.ledger.quarantine_raw(body, str(exc))
            status = AckStatus.QUARANTINED
        r = self.report
        r.records_transferred += 1
        r.transfers.append((version.record.record_id, arrival, "A>B" if sender is self.a else "B>A", status))
        if sender is self.a:
            r.records_sent += 1
        else:
            r.records_received += 1
        if status == AckStatus.QUARANTINED:
            r.quarantined += 1
        self.send(receiver, MessageKind.ACK, encode_ack(version.record.record_id, status))


def run_sync(a: SyncEndpoint, b: SyncEndpoint, channel: Optional[Channel] = None,
             direction: str = "both") -> SyncReport:
    """Run one session with ``a`` as initiator.  Counters are from ``a``'s side.

    Records are applied as they arrive, so an aborted session keeps its
    progress and the next session only moves what is still different.
    Transport and auth failures raise a :class:`SyncError` whose
    ``report`` holds the partial counters.
    """
    if direction not in ("both", "push"):
        raise ValueError(f"direction must be 'both' or 'push', not {direction!r}")
    channel = channel or Channel()
    a.begin_session()
    b.begin_session()
    s = _Session(a, b, channel)
    try:
        _drive(s, direction)
    except SyncError as exc:
        exc.report = s.finish()
        exc.report.error = type(exc).__name__
        raise
    return s.finish()


def _drive(s: _Session, direction: str):
    a, b = s.a, s.b
    s.report.rounds = 1
    root_a = s.send(a, MessageKind.ROOT_HELLO, a.ledger.root)
    root_b = s.send(b, MessageKind.ROOT_HELLO, b.ledger.root)
    if len(root_a) != 32 or len(root_b) != 32:
        raise SyncError("RootHello body must be 32 bytes")
    if root_a == root_b:
        s.report.converged = True
        return

    da, db = _Descent(a.ledger), _Descent(b.ledger)
    listing = decode_listing(s.send(a, MessageKind.BRANCH_QUERY, encode_listing(da.listing())))
    verdicts, counts, extras, digests = db.answer_listing(listing)
    inv_b = db.inventory() if not digests else None
    body = s.send(b, MessageKind.BRANCH_REPLY, encode_listing_reply(verdicts, counts, extras, digests, inv_b))
    verdicts, counts, extras, digests, inv_b = decode_listing_reply(body)
    inv_a = None
    if inv_b is None:
        verdicts, digests = da.on_listing_reply(verdicts, counts, extras, digests)
        side, desc_side, desc_other = a, da, db
        while True:
            terminal = not digests
            inv = desc_side.inventory() if terminal else None
            kind = MessageKind.BRANCH_QUERY if side is a else MessageKind.BRANCH_REPLY
            got_verdicts, got_digests, got_inv = decode_descent(
                s.send(side, kind, encode_descent(verdicts, digests, inv)))
            verdicts, digests = desc_other.on_descent(got_verdicts, got_digests)
            if terminal:
                if side is a:
                    inv_a = got_inv
                else:
                    inv_b = got_inv
                break
            side = b if side is a else a
            desc_side, desc_other = desc_other, desc_side
    else:
        da.on_listing_reply(verdicts, counts, extras, digests)
    # whoever has not yet shown its inventory does so now
    if inv_a is None:
        _, _, inv_a = decode_descent(s.send(a, MessageKind.BRANCH_QUERY, encode_inventory(da.inventory())))
    else:
        _, _, inv_b = decode_descent(s.send(b, MessageKind.BRANCH_REPLY, encode_inventory(db.inventory())))

    for owner, entry in transfer_queue(inv_a, inv_b, direction):
        sender, receiver = (a, b) if owner == "A" else (b, a)
        version = sender.ledger.current(entry.record_id)
        s.deliver(sender, receiver, version)

    final_a = s.send(a, MessageKind.DONE, a.ledger.root)
    final_b = s.send(b, MessageKind.DONE, b.ledger.root)
    s.report.converged = final_a == final_b


# -- in-memory planning ---------------------------------------------------

@dataclass(frozen=True)
class SyncPlan:
    queue: Tuple[Tuple[str, bytes], ...]   # ("local"|"remote", record_id), send order
    branch_queries: int
    differing: Dict[bytes, Tuple[int, ...]]

    @property
    def record_ids(self) -> Tuple[bytes, ...]:
        return tuple(rid for _, rid in self.queue)

    def __len__(self):
        return len(self.queue)


def plan_sync(local: Ledger, remote: Ledger, direction: str = "both") -> SyncPlan:
    """Run the diff without framing; ``remote`` is consulted only through its digests."""
    if local.root == remote.root:
        return SyncPlan((), 0, {})
    dl, dr = _Descent(local), _Descent(remote)
    queries = 1
    verdicts, counts, extras, digests = dr.answer_listing(dl.listing())
    terminal_by_local = False
    if digests:
        verdicts, digests = dl.on_listing_reply(verdicts, counts, extras, digests)
        by_local = True
        while True:
            queries += by_local
            receiver = dr if by_local else dl
            terminal = not digests
            verdicts, digests = receiver.on_descent(verdicts, digests)
            if terminal:
                terminal_by_local = by_local
                break
            by_local = not by_local
    else:
        dl.on_listing_reply(verdicts, counts, extras, digests)
    if not terminal_by_local:
        queries += 1  # local shows its inventory in one more query
    queue = transfer_queue(dl.inventory(), dr.inventory(), direction)
    differing = {f: tuple(sorted(ps)) for f, ps in dl.diff.items()}
    return SyncPlan(tuple(("local" if o == "A" else "remote", e.record_id) for o, e in queue),
                    queries, differing)


def bandwidth_bound(records: Sequence[HealthRecord], depth: int, facilities: int) -> int:
    """Upper bound on total session bytes when ``records`` differ.

    fixed part: RootHello and Done both ways, the facility listing and its
    reply, and framing for up to ``depth + 3`` descent/inventory messages;
    per record: its RecordTransfer and Ack frames plus one inventory entry
    on each side; per record and level: two sibling digests and their
    verdict bits.
    """
    k = len(records)
    fixed = (4 * (FRAME_OVERHEAD + 32)
             + 2 * (FRAME_OVERHEAD + 1 + 4) + facilities * (8 + 4 + 32)
             + facilities * (4 + 8 + 4 + 1) + 3 * 4 + 2
             + (depth + 3) * (FRAME_OVERHEAD + 1 + 1 + 4 + 1 + 4))
    per_record = sum(2 * FRAME_OVERHEAD + 4 + len(encode_record(r)) + PROOF_LEN + 17 + 2 * INVENTORY_ENTRY
                     for r in records)
    descent = 2 * k * depth * 32 + -(-2 * k * depth // 8)
    return fixed + per_record + descent


# -- hierarchy ------------------------------------------------------------

def upstream_route(facility_id: bytes, topology) -> Optional[bytes]:
    """Next hop toward the apex; None at tier 3."""
    if topology.tier(facility_id) == 3:
        return None
    parent = topology.parent(facility_id)
    if parent is None:
        label = facility_id.hex() if isinstance(facility_id, bytes) else facility_id
        raise OrphanFacility(f"facility {label} has no parent below tier 3")
    return parent


def locate_record(record_id: bytes, start: bytes, topology, ledgers) -> Optional[Tuple[bytes, int]]:
    """Walk upward from ``start`` until a ledger holds ``record_id``: (facility, hops)."""
    facility, hops = start, 0
    while facility is not None:
        if record_id in ledgers[facility]:
            return facility, hops
        parent = topology.parent(facility)
        if parent is None:
            return None
        facility, hops = parent, hops + 1
    return None
