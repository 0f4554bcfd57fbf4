"""Per-facility append-only record store with Merkle root and audit history.

Current records are ordered canonically: grouped by originating facility
(ascending facility id), then by record id.  The ledger root is the Merkle
root over that leaf sequence, so two ledgers holding the same current
records have the same root no matter in which order they learned them.

Every version of a record is kept.  The current one is the version with
the greatest last-write-wins key ``(edited_at, editor_device, leaf)``,
where the first two come from the version's proof header.  Audit entries
are the versions in key order, chained through their leaves.
"""

import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

from .dhf import PROOF_LEN, DeviceRegistry, DhfProof, verify_proof
from .errors import SiliconHealthError
from .hashcore import Difficulty
from .merkle import MerkleTree, build_tree
from .records import HealthRecord, decode_record, encode_record, leaf_hash

ZERO_DIGEST = bytes(32)
EMPTY_ROOT = ZERO_DIGEST
MAGIC = b"SLH1"

TAG_VERSION = 0x01
TAG_AUDIT = 0x02
TAG_QUARANTINE = 0x03
TAG_TRAILER = 0x7F

_AUDIT = struct.Struct(">16sI8sQ32s32s")
_FILE_HEADER = struct.Struct(">4s8sQQ")


class LedgerError(SiliconHealthError):
    pass


class RejectedProof(LedgerError):
    def __init__(self, reason):
        super().__init__(f"rejected-proof: {reason}")
        self.reason = reason


class DuplicateRecord(LedgerError):
    pass


class UnknownRecord(LedgerError):
    pass


class StaleWrite(LedgerError):
    """A write whose LWW key does not exceed the current version's."""


class LedgerCorruption(LedgerError):
    pass


@dataclass(frozen=True)
class Version:
    record: HealthRecord
    proof: DhfProof
    leaf: bytes

    @property
    def edited_at(self) -> int:
        return self.proof.header.timestamp

    @property
    def editor_device(self) -> bytes:
        return self.proof.header.device_id

    @property
    def key(self):
        return (self.edited_at, self.editor_device, self.leaf)

    def to_bytes(self) -> bytes:
        enc = encode_record(self.record)
        return struct.pack(">I", len(enc)) + enc + self.proof.to_bytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Version":
        (n,) = struct.unpack_from(">I", raw)
        if len(raw) != 4 + n + PROOF_LEN:
            raise LedgerError("malformed version encoding")
        record = decode_record(raw[4:4 + n])
        return cls(record, DhfProof.from_bytes(raw[4 + n:]), leaf_hash(record))


def make_version(record: HealthRecord, proof: DhfProof) -> Version:
    return Version(record, proof, leaf_hash(record))


@dataclass(frozen=True)
class AuditEntry:
    record_id: bytes
    version: int
    editor_device: bytes
    edited_at: int
    previous_leaf: bytes
    new_leaf: bytes

    def to_bytes(self) -> bytes:
        return _AUDIT.pack(self.record_id, self.version, self.editor_device, self.edited_at,
                           self.previous_leaf, self.new_leaf)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "AuditEntry":
        if len(raw) != _AUDIT.size:
            raise LedgerCorruption("malformed audit entry")
        return cls(*_AUDIT.unpack(raw))


# merge_version outcomes
NEW = "new"
UPDATED = "updated"
SUPERSEDED = "superseded"
KNOWN = "known"


class Ledger:
    def __init__(self, facility_id: bytes, registry: DeviceRegistry,
                 min_difficulty: Optional[Difficulty] = None):
        if len(facility_id) != 8:
            raise ValueError("facility_id must be 8 bytes")
        self.facility_id = facility_id
        self.registry = registry
        self.min_difficulty = min_difficulty
        self.quarantine: List[Tuple[bytes, str]] = []
        self._versions: Dict[bytes, List[Version]] = {}
        self._groups: Dict[bytes, List[bytes]] = {}
        self._trees: Dict[bytes, MerkleTree] = {}
        self._tree: Optional[MerkleTree] = None
        self._lock = threading.RLock()

    # -- reads ---------------------------------------------------------

    def __len__(self):
        return len(self._versions)

    def __contains__(self, record_id):
        return record_id in self._versions

    def record_ids(self) -> Iterator[bytes]:
        for fac in self.facilities():
            yield from self._groups[fac]

    def facilities(self) -> List[bytes]:
        return sorted(self._groups)

    def current(self, record_id: bytes) -> Version:
        try:
            return self._versions[record_id][-1]
        except KeyError:
            raise UnknownRecord(record_id.hex()) from None

    def get(self, record_id: bytes) -> HealthRecord:
        return self.current(record_id).record

    def records(self) -> Iterator[HealthRecord]:
        for rid in self.record_ids():
            yield self._versions[rid][-1].record

    def versions(self, record_id: bytes) -> List[Version]:
        if record_id not in self._versions:
            raise UnknownRecord(record_id.hex())
        return list(self._versions[record_id])

    def knows_leaf(self, record_id: bytes, leaf: bytes) -> bool:
        return any(v.leaf == leaf for v in self._versions.get(record_id, ()))

    def history(self, record_id: bytes) -> List[AuditEntry]:
        entries = []
        prev = ZERO_DIGEST
        for i, v in enumerate(self.versions(record_id), start=1):
            entries.append(AuditEntry(record_id, i, v.editor_device, v.edited_at, prev, v.leaf))
            prev = v.leaf
        return entries

    def leaves(self) -> List[bytes]:
        return [self._versions[rid][-1].leaf for rid in self.record_ids()]

    @property
    def tree(self) -> Optional[MerkleTree]:
        with self._lock:
            if self._tree is None and self._versions:
                self._tree = build_tree(self.leaves())
            return self._tree

    @property
    def root(self) -> bytes:
        tree = self.tree
        return tree.root if tree is not None else EMPTY_ROOT

    def snapshot(self) -> Tuple[bytes, Tuple[bytes, ...]]:
        with self._lock:
            return self.root, tuple(self.leaves())

    def index_of(self, record_id: bytes) -> int:
        for i, rid in enumerate(self.record_ids()):
            if rid == record_id:
                return i
        raise UnknownRecord(record_id.hex())

    def facility_tree(self, facility: bytes) -> Optional[MerkleTree]:
        if facility not in self._groups:
            return None
        tree = self._trees.get(facility)
        if tree is None:
            tree = build_tree([self._versions[rid][-1].leaf for rid in self._groups[facility]])
            self._trees[facility] = tree
        return tree

    def facility_count(self, facility: bytes) -> int:
        return len(self._groups.get(facility, ()))

    def version_at(self, facility: bytes, index: int) -> Version:
        return self._versions[self._groups[facility][index]][-1]

    # -- writes --------------------------------------------------------

    def _check(self, record: HealthRecord, proof: DhfProof) -> Version:
        version = make_version(record, proof)
        verdict = verify_proof(proof, version.leaf, self.registry, self.min_difficulty)
        if not verdict:
            raise RejectedProof(verdict.reason)
        return version

    def _touch(self, facility: bytes):
        self._trees.pop(facility, None)
        self._tree = None

    def _insert_new(self, version: Version):
        rid = version.record.record_id
        self._versions[rid] = [version]
        group = self._groups.setdefault(version.record.facility_id, [])
        group.append(rid)
        if len(group) > 1 and group[-2] > rid:
            group.sort()
        self._touch(version.record.facility_id)

    def append_record(self, record: HealthRecord, proof: DhfProof) -> bytes:
        with self._lock:
            version = self._check(record, proof)
            if record.record_id in self._versions:
                raise DuplicateRecord(f"record {record.record_id.hex()} already present; use update_record")
            self._insert_new(version)
            return self.root

    def update_record(self, record: HealthRecord, proof: DhfProof) -> bytes:
        with self._lock:
            if record.record_id not in self._versions:
                raise UnknownRecord(record.record_id.hex())
            version = self._check(record, proof)
            cur = self._versions[record.record_id][-1]
            if version.key <= cur.key:
                raise StaleWrite(f"write at {version.edited_at} does not supersede version at {cur.edited_at}")
            self._merge_checked(version)
            return self.root

    def merge_version(self, record: HealthRecord, proof: DhfProof) -> str:
        """Fold in a version learned from a peer. Losing versions are kept in history."""
        with self._lock:
            return self._merge_checked(self._check(record, proof))

    def _merge_checked(self, version: Version) -> str:
        rid = version.record.record_id
        chain = self._versions.get(rid)
        if chain is None:
            self._insert_new(version)
            return NEW
        if version.record.facility_id != chain[0].record.facility_id:
            raise LedgerError("a record cannot change its originating facility")
        # identical content signed twice stays as two versions so every
        # replica orders the chain by the same (edited_at, device, leaf) key
        if any(known.key == version.key for known in chain):
            return KNOWN
        old_current = chain[-1]
        chain.append(version)
        chain.sort(key=lambda v: v.key)
        if chain[-1] is old_current:
            return SUPERSEDED
        self._touch(version.record.facility_id)
        return UPDATED

    def quarantine_raw(self, raw: bytes, reason: str):
        with self._lock:
            self.quarantine.append((bytes(raw), reason))

    # -- persistence ---------------------------------------------------

    def to_bytes(self) -> bytes:
        with self._lock:
            md = self.min_difficulty
            out = [_FILE_HEADER.pack(MAGIC, self.facility_id, md.d if md else 0, md.scale if md else 0)]
            for rid in self.record_ids():
                for version, entry in zip(self._versions[rid], self.history(rid)):
                    out.append(_entry(TAG_VERSION, version.to_bytes()))
                    out.append(_entry(TAG_AUDIT, entry.to_bytes()))
            for raw, reason in self.quarantine:
                r = reason.encode()
                out.append(_entry(TAG_QUARANTINE, bytes([len(r)]) + r + raw))
            out.append(_entry(TAG_TRAILER, self.root + struct.pack(">I", len(self._versions))))
            return b"".join(out)

    def save(self, path):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def from_bytes(cls, raw: bytes, registry: DeviceRegistry, verify: bool = True) -> "Ledger":
        if len(raw) < _FILE_HEADER.size:
            raise LedgerCorruption("truncated ledger file")
        magic, facility_id, md, ms = _FILE_HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise LedgerCorruption("bad magic")
        ledger = cls(facility_id, registry, Difficulty(md, ms) if md else None)
        pos = _FILE_HEADER.size
        trailer = None
        pending: Optional[Version] = None
        stored_audit: Dict[bytes, List[AuditEntry]] = {}
        try:
            while pos < len(raw):
                tag, n = struct.unpack_from(">BI", raw, pos)
                body = raw[pos + 5:pos + 5 + n]
                if len(body) != n:
                    raise LedgerCorruption("truncated entry")
                pos += 5 + n
                if tag == TAG_VERSION:
                    pending = Version.from_bytes(body)
                    if verify:
                        ledger._check(pending.record, pending.proof)
                    ledger._merge_checked(pending)
                elif tag == TAG_AUDIT:
                    entry = AuditEntry.from_bytes(body)
                    if pending is None or entry.new_leaf != pending.leaf:
                        raise LedgerCorruption("audit entry does not follow its version")
                    stored_audit.setdefault(entry.record_id, []).append(entry)
                    pending = None
                elif tag == TAG_QUARANTINE:
                    k = body[0]
                    ledger.quarantine.append((body[1 + k:], body[1:1 + k].decode()))
                elif tag == TAG_TRAILER:
                    trailer = body
                else:
                    raise LedgerCorruption(f"unknown entry tag {tag}")
        except (struct.error, IndexError, SiliconHealthError) as exc:
            if isinstance(exc, LedgerCorruption):
                raise
            raise LedgerCorruption(str(exc)) from exc
        if trailer is None:
            raise LedgerCorruption("missing trailer")
        for rid, entries in stored_audit.items():
            if entries != ledger.history(rid):
                raise LedgerCorruption(f"audit history mismatch for {rid.hex()}")
        if trailer[:32] != ledger.root:
            raise LedgerCorruption("root mismatch against trailer")
        return ledger

    @classmethod
    def load(cls, path, registry: DeviceRegistry, verify: bool = True) -> "Ledger":
        return cls.from_bytes(Path(path).read_bytes(), registry, verify)


def _entry(tag: int, body: bytes) -> bytes:
    return struct.pack(">BI", tag, len(body)) + body
