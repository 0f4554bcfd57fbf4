"""Canonical health-record encoding and leaf hashing.

Layout (big-endian), 72 bytes plus the payload:

    offset  size  field
    0       16    record_id
    16      32    patient_pseudonym
    48      8     facility_id
    56      1     record_type
    57      8     created_at (seconds UTC)
    65      1     flags (bit0 emergency, bit1 referral_pending)
    66      2     patient_birth_year
    68      4     payload length
    72      n     payload
"""

import enum
import struct
from dataclasses import dataclass

from .errors import SiliconHealthError
from .hashcore import sha256, sha256d

MAX_PAYLOAD = 64 * 1024
PREFIX_LEN = 72
_PREFIX = struct.Struct(">16s32s8sBQBHI")

LEAF_PREFIX = b"\x00"

FLAG_EMERGENCY = 0x01
FLAG_REFERRAL = 0x02


class RecordError(SiliconHealthError):
    pass


class OversizePayload(RecordError):
    pass


class RecordType(enum.IntEnum):
    VISIT = 0
    PRESCRIPTION = 1
    LAB = 2
    IMAGE_REF = 3
    VACCINATION = 4
    REFERRAL = 5


@dataclass(frozen=True)
class HealthRecord:
    record_id: bytes
    patient_pseudonym: bytes
    facility_id: bytes
    record_type: RecordType
    created_at: int
    flags: int = 0
    patient_birth_year: int = 0
    payload: bytes = b""

    @property
    def emergency(self) -> bool:
        return bool(self.flags & FLAG_EMERGENCY)

    @property
    def referral_pending(self) -> bool:
        return bool(self.flags & FLAG_REFERRAL)

    @property
    def text(self) -> str:
        return self.payload.decode("utf-8", errors="replace")


def encode_record(record: HealthRecord) -> bytes:
    if len(record.payload) > MAX_PAYLOAD:
        raise OversizePayload(f"payload is {len(record.payload)} bytes, limit {MAX_PAYLOAD}")
    for name, size in (("record_id", 16), ("patient_pseudonym", 32), ("facility_id", 8)):
        if len(getattr(record, name)) != size:
            raise RecordError(f"{name} must be {size} bytes")
    if not 0 <= record.flags <= 0xFF:
        raise RecordError("flags must fit one byte")
    return _PREFIX.pack(record.record_id, record.patient_pseudonym, record.facility_id,
                        int(record.record_type), record.created_at, record.flags,
                        record.patient_birth_year, len(record.payload)) + record.payload


def decode_record(raw: bytes) -> HealthRecord:
    if len(raw) < PREFIX_LEN:
        raise RecordError("truncated record")
    rid, pseud, fac, rtype, created, flags, birth, n = _PREFIX.unpack_from(raw)
    if n > MAX_PAYLOAD:
        raise OversizePayload(f"declared payload {n} bytes exceeds limit")
    if len(raw) != PREFIX_LEN + n:
        raise RecordError(f"record length {len(raw)} does not match declared payload {n}")
    try:
        rtype = RecordType(rtype)
    except ValueError:
        raise RecordError(f"unknown record type {rtype}") from None
    return HealthRecord(rid, pseud, fac, rtype, created, flags, birth, bytes(raw[PREFIX_LEN:]))


def leaf_hash(record: HealthRecord) -> bytes:
    return sha256d(LEAF_PREFIX + encode_record(record))


def make_record_id(facility_id: bytes, seq: int) -> bytes:
    """Facility-scoped sequential id; sorts in creation order within a facility."""
    return facility_id + seq.to_bytes(8, "big")


def pseudonym_hash16(pseudonym: bytes) -> bytes:
    return sha256(pseudonym)[:16]
