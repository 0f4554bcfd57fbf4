"""Ephemeral session keys, transaction tags and replay rejection.

Keys come from HKDF-SHA256 over the device secret with
``salt = window_start || nonce`` and a fixed info string.  A key is valid
on the closed-open window ``[window_start, window_start + ttl)``.
"""

import hashlib
import hmac
import struct
import threading
from dataclasses import dataclass
from typing import Dict, Tuple

from .errors import ACCEPT, SiliconHealthError, Verdict, reject

INFO = b"SiliconHealth-v1"
DEFAULT_TTL = 30
DEFAULT_SKEW = 5
NONCE_LEN = 16
TAG_LEN = 56
_TAG = struct.Struct(">Q16s32s")

BAD_TAG = "bad-tag"
EXPIRED = "expired"
REPLAYED = "replayed"


class SessionError(SiliconHealthError):
    pass


class ExpiredKey(SessionError):
    pass


def hkdf_sha256(ikm: bytes, salt: bytes, info: bytes, length: int = 32) -> bytes:
    """RFC 5869 extract-then-expand."""
    if length > 255 * 32:
        raise ValueError("HKDF output too long")
    prk = hmac.new(salt or bytes(32), ikm, hashlib.sha256).digest()
    okm, block = b"", b""
    for i in range(1, -(-length // 32) + 1):
        block = hmac.new(prk, block + info + bytes([i]), hashlib.sha256).digest()
        okm += block
    return okm[:length]


@dataclass(frozen=True)
class SessionKey:
    key: bytes
    device_id: bytes
    window_start: int
    ttl_seconds: int = DEFAULT_TTL
    nonce: bytes = bytes(NONCE_LEN)

    def valid_at(self, now: float) -> bool:
        return self.window_start <= now < self.window_start + self.ttl_seconds

    @property
    def expires_at(self) -> int:
        return self.window_start + self.ttl_seconds


@dataclass(frozen=True)
class AuthTag:
    tag: bytes
    window_start: int
    nonce: bytes

    def to_bytes(self) -> bytes:
        return _TAG.pack(self.window_start, self.nonce, self.tag)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "AuthTag":
        if len(raw) != TAG_LEN:
            raise SessionError(f"auth tag must be {TAG_LEN} bytes")
        window_start, nonce, tag = _TAG.unpack(raw)
        return cls(tag, window_start, nonce)


def derive_session_key(device_secret: bytes, window_start: int, nonce: bytes,
                       device_id: bytes = bytes(8), ttl_seconds: int = DEFAULT_TTL) -> SessionKey:
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    salt = struct.pack(">Q", window_start) + nonce
    key = hkdf_sha256(device_secret, salt, INFO, 32)
    return SessionKey(key, device_id, window_start, ttl_seconds, nonce)


def open_session(device, now: float, rng) -> SessionKey:
    """Fresh key for ``device`` starting at ``floor(now)`` with 16 random nonce bytes."""
    return derive_session_key(device.device_secret, int(now), rng.bytes(NONCE_LEN), device.device_id)


def sign_transaction(key: SessionKey, message: bytes, now: float) -> AuthTag:
    if not key.valid_at(now):
        raise ExpiredKey(f"key window [{key.window_start}, {key.expires_at}) does not cover {now}")
    tag = hmac.new(key.key, message, hashlib.sha256).digest()
    return AuthTag(tag, key.window_start, key.nonce)


class ReplayCache:
    """Seen (window_start, nonce, message digest) triples with atomic check-and-insert."""

    def __init__(self):
        self._seen: Dict[Tuple[int, bytes, bytes], int] = {}
        self._lock = threading.Lock()

    def check_and_insert(self, entry: Tuple[int, bytes, bytes], expires_at: float) -> bool:
        """True if ``entry`` was absent (and is now recorded)."""
        with self._lock:
            if entry in self._seen:
                return False
            self._seen[entry] = expires_at
            return True

    def evict(self, now: float) -> int:
        # An entry past its expiry could never verify again, so dropping it is safe.
        with self._lock:
            stale = [e for e, exp in self._seen.items() if exp <= now]
            for e in stale:
                del self._seen[e]
            return len(stale)

    def __len__(self):
        return len(self._seen)

    def __contains__(self, entry):
        return entry in self._seen


def verify_transaction(device_secret: bytes, message: bytes, tag: AuthTag, now: float,
                       replay_cache: ReplayCache, ttl_seconds: int = DEFAULT_TTL,
                       clock_skew: float = DEFAULT_SKEW) -> Verdict:
    key = derive_session_key(device_secret, tag.window_start, tag.nonce, ttl_seconds=ttl_seconds)
    expected = hmac.new(key.key, message, hashlib.sha256).digest()
    if not hmac.compare_digest(expected, tag.tag):
        return reject(BAD_TAG)
    deadline = tag.window_start + ttl_seconds + clock_skew
    if not now < deadline:
        return reject(EXPIRED)
    entry = (tag.window_start, tag.nonce, hashlib.sha256(message).digest())
    if not replay_cache.check_and_insert(entry, deadline):
        return reject(REPLAYED)
    return ACCEPT
