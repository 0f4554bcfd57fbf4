import pytest
from hypothesis import given, strategies as st

from siliconhealth.records import (PREFIX_LEN, HealthRecord, OversizePayload, RecordError, RecordType,
                                   decode_record, encode_record, leaf_hash, make_record_id)

records = st.builds(
    HealthRecord,
    record_id=st.binary(min_size=16, max_size=16),
    patient_pseudonym=st.binary(min_size=32, max_size=32),
    facility_id=st.binary(min_size=8, max_size=8),
    record_type=st.sampled_from(list(RecordType)),
    created_at=st.integers(0, 2 ** 64 - 1),
    flags=st.integers(0, 255),
    patient_birth_year=st.integers(0, 65535),
    payload=st.binary(max_size=512),
)


@given(records)
def test_encode_decode_roundtrip(r):
    raw = encode_record(r)
    assert len(raw) == PREFIX_LEN + len(r.payload)
    assert decode_record(raw) == r


@given(records, records)
def test_leaf_hash_separates_records(a, b):
    if a != b:
        assert leaf_hash(a) != leaf_hash(b)


def test_layout_is_big_endian():
    r = HealthRecord(bytes(range(16)), bytes(32), b"F" * 8, RecordType.LAB, 0x0102, 3, 1999, b"hi")
    raw = encode_record(r)
    assert raw[:16] == bytes(range(16))
    assert raw[56] == RecordType.LAB
    assert raw[57:65] == (0x0102).to_bytes(8, "big")
    assert raw[65] == 3 and raw[66:68] == (1999).to_bytes(2, "big")
    assert raw[68:72] == (2).to_bytes(4, "big") and raw[72:] == b"hi"


def test_rejects_malformed():
    r = HealthRecord(bytes(16), bytes(32), bytes(8), RecordType.VISIT, 0)
    with pytest.raises(RecordError):
        decode_record(encode_record(r)[:10])
    with pytest.raises(RecordError):
        encode_record(HealthRecord(bytes(15), bytes(32), bytes(8), RecordType.VISIT, 0))
    with pytest.raises(OversizePayload):
        encode_record(HealthRecord(bytes(16), bytes(32), bytes(8), RecordType.VISIT, 0, payload=bytes(70000)))
    bad_type = bytearray(encode_record(r))
    bad_type[56] = 99
    with pytest.raises(RecordError):
        decode_record(bytes(bad_type))


def test_record_ids_sort_by_sequence():
    ids = [make_record_id(b"abcdefgh", n) for n in (1, 2, 10, 300)]
    assert ids == sorted(ids)


def test_flags():
    r = HealthRecord(bytes(16), bytes(32), bytes(8), RecordType.VISIT, 0, flags=3, payload="homa".encode())
    assert r.emergency and r.referral_pending and r.text == "homa"
