import json
import struct
import threading
from pathlib import Path

import numpy as np
import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from hypothesis import given, settings, strategies as st

from siliconhealth.session import (BAD_TAG, EXPIRED, INFO, REPLAYED, TAG_LEN, AuthTag, ExpiredKey, ReplayCache,
                                   SessionError, derive_session_key, hkdf_sha256, sign_transaction,
                                   verify_transaction)

VECTORS = json.loads((Path(__file__).parent / "fixtures" / "hkdf_vectors.json").read_text())


def reference_key(secret, start, nonce):
    salt = struct.pack(">Q", start) + nonce
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=salt, info=INFO).derive(secret)


def test_rfc5869_case_1():
    okm = hkdf_sha256(bytes([0x0B] * 22), bytes(range(13)), bytes(range(0xF0, 0xFA)), 42)
    assert okm.hex() == ("3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf"
                         "34007208d5b887185865")


def test_rfc5869_case_3_empty_salt():
    okm = hkdf_sha256(bytes([0x0B] * 22), b"", b"", 42)
    assert okm.hex() == ("8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d"
                         "9d201395faa4b61a96c8")


@pytest.mark.parametrize("v", VECTORS["vectors"], ids=lambda v: str(v["window_start"]))
def test_golden_vectors(v):
    key = derive_session_key(bytes.fromhex(v["device_secret"]), v["window_start"], bytes.fromhex(v["nonce"]))
    assert key.key.hex() == v["key"]


@settings(max_examples=100, deadline=None)
@given(st.binary(min_size=32, max_size=32), st.integers(0, 2 ** 63), st.binary(min_size=16, max_size=16))
def test_matches_reference_hkdf(secret, start, nonce):
    assert derive_session_key(secret, start, nonce).key == reference_key(secret, start, nonce)


def test_adjacent_windows_differ(rng):
    for _ in range(50):
        s, n, t = rng.bytes(32), rng.bytes(16), int(rng.integers(0, 2 ** 40))
        assert derive_session_key(s, t, n).key != derive_session_key(s, t + 1, n).key


def test_sign_window_is_closed_open(rng):
    key = derive_session_key(rng.bytes(32), 1000, rng.bytes(16))
    sign_transaction(key, b"m", 1000)
    sign_transaction(key, b"m", 1029)
    sign_transaction(key, b"m", 1029.999)
    with pytest.raises(ExpiredKey):
        sign_transaction(key, b"m", 1030)
    with pytest.raises(ExpiredKey):
        sign_transaction(key, b"m", 999)


def test_verify_paths(rng):
    secret = rng.bytes(32)
    key = derive_session_key(secret, 1000, rng.bytes(16))
    tag = sign_transaction(key, b"hello", 1001)
    cache = ReplayCache()
    assert verify_transaction(secret, b"hello", tag, 1002, cache)
    assert verify_transaction(secret, b"hello", tag, 1002, cache).reason == REPLAYED
    assert verify_transaction(secret, b"other", tag, 1002, cache).reason == BAD_TAG
    assert verify_transaction(rng.bytes(32), b"hello", tag, 1002, ReplayCache()).reason == BAD_TAG
    # deadline = start + ttl + skew
    assert verify_transaction(secret, b"hello", tag, 1034.9, ReplayCache())
    assert verify_transaction(secret, b"hello", tag, 1035, ReplayCache()).reason == EXPIRED
    assert verify_transaction(secret, b"hello", tag, 1031 + 5, ReplayCache(), clock_skew=5).reason == EXPIRED


def test_wire_form(rng):
    key = derive_session_key(rng.bytes(32), 77, rng.bytes(16))
    tag = sign_transaction(key, b"x", 80)
    raw = tag.to_bytes()
    assert len(raw) == TAG_LEN == 56
    assert raw[:8] == (77).to_bytes(8, "big") and raw[8:24] == key.nonce
    assert AuthTag.from_bytes(raw) == tag
    with pytest.raises(SessionError):
        AuthTag.from_bytes(raw[:-1])


def test_eviction_keeps_correctness(rng):
    secret = rng.bytes(32)
    key = derive_session_key(secret, 0, rng.bytes(16))
    tag = sign_transaction(key, b"m", 0)
    cache = ReplayCache()
    assert verify_transaction(secret, b"m", tag, 1, cache)
    assert cache.evict(100) == 1 and len(cache) == 0
    # evicted, but expired anyway
    assert verify_transaction(secret, b"m", tag, 100, cache).reason == EXPIRED


def test_concurrent_presentations_accept_once(rng):
    secret = rng.bytes(32)
    tag = sign_transaction(derive_session_key(secret, 0, rng.bytes(16)), b"m", 0)
    cache = ReplayCache()
    results = []
    barrier = threading.Barrier(8)

    def present():
        barrier.wait()
        results.append(bool(verify_transaction(secret, b"m", tag, 1, cache)))

    threads = [threading.Thread(target=present) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(results) == [False] * 7 + [True]
