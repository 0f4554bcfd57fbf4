"""Deterministic hardware fingerprinting: device-bound proofs of work over record digests.

A proof header commits to the record digest, the device id, and a keyed
commitment ``sha256(device_secret || record_digest)``.  The nonce search
runs on the simulated ASIC kernel; verification recomputes everything
through hashlib so the two paths stay independent.
"""

import struct
import threading
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import asic
from .errors import ACCEPT, SiliconHealthError, Verdict, reject
from .hashcore import Difficulty, digest_int, sha256, sha256d, target_for

HEADER_LEN = 88
PROOF_LEN = 136
_HEADER = struct.Struct(">32s8s32sQQ")
_PROOF_TAIL = struct.Struct(">QQ32s")

# Verdict reasons, in the order verify_proof checks them.
STALE_BINDING = "stale-binding"
BAD_HASH = "bad-hash"
INSUFFICIENT_WORK = "insufficient-work"
UNKNOWN_DEVICE = "unknown-device"
BAD_COMMITMENT = "bad-commitment"


class NonceSpaceExhausted(SiliconHealthError):
    pass


class ProofFormatError(SiliconHealthError):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    device_id: bytes
    device_secret: bytes
    nominal_hashrate: float
    power_watts: float
    tier: int
    hashrate_cv: float = 0.08
    model: str = "custom"

    def __post_init__(self):
        if len(self.device_id) != 8:
            raise ValueError("device_id must be 8 bytes")
        if len(self.device_secret) != 32:
            raise ValueError("device_secret must be 32 bytes")
        if self.nominal_hashrate <= 0:
            raise ValueError("nominal_hashrate must be positive")
        if not 0 <= self.hashrate_cv < 1:
            raise ValueError("hashrate_cv must be in [0, 1)")
        if self.power_watts <= 0:
            raise ValueError("power_watts must be positive")
        if not 0 <= self.tier <= 3:
            raise ValueError("tier must be 0..3")

    @property
    def hashes_per_watt(self) -> float:
        return self.nominal_hashrate / self.power_watts


# Hardware table by tier: (hashrate H/s, power W, tier).  The USB stick uses
# the midpoint of its quoted 50-100 GH/s and 2-5 W ranges.
DEVICE_MODELS = {
    "s19pro": (110e12, 3250.0, 3),
    "s9": (14e12, 1372.0, 2),
    "lv06": (500e9, 13.0, 1),
    "lv07": (700e9, 15.0, 1),
    "usb": (75e9, 3.5, 0),
}

TIER_DEFAULT_MODEL = {3: "s19pro", 2: "s9", 1: "lv06", 0: "usb"}


def make_device(model: str, rng: np.random.Generator, device_id: Optional[bytes] = None,
                **overrides) -> DeviceProfile:
    """Provision a simulated device of a known model with a fresh secret."""
    try:
        hashrate, power, tier = DEVICE_MODELS[model]
    except KeyError:
        raise ValueError(f"unknown device model {model!r}; known: {sorted(DEVICE_MODELS)}") from None
    if device_id is None:
        device_id = rng.bytes(8)
    params = dict(device_id=device_id, device_secret=rng.bytes(32), nominal_hashrate=hashrate,
                  power_watts=power, tier=tier, model=model)
    params.update(overrides)
    return DeviceProfile(**params)


@dataclass(frozen=True)
class ProofHeader:
    record_digest: bytes
    device_id: bytes
    device_commitment: bytes
    timestamp: int
    nonce: int

    def to_bytes(self) -> bytes:
        return _HEADER.pack(self.record_digest, self.device_id, self.device_commitment,
                            self.timestamp, self.nonce)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ProofHeader":
        if len(raw) != HEADER_LEN:
            raise ProofFormatError(f"header must be {HEADER_LEN} bytes")
        return cls(*_HEADER.unpack(raw))


@dataclass(frozen=True)
class DhfProof:
    header: ProofHeader
    difficulty: Difficulty
    proof_hash: bytes

    def to_bytes(self) -> bytes:
        if self.difficulty.d >= 1 << 64 or self.difficulty.scale >= 1 << 64:
            raise ProofFormatError("difficulty terms do not fit the 8-byte wire fields")
        return self.header.to_bytes() + _PROOF_TAIL.pack(
            self.difficulty.d, self.difficulty.scale, self.proof_hash)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DhfProof":
        if len(raw) != PROOF_LEN:
            raise ProofFormatError(f"proof must be {PROOF_LEN} bytes, got {len(raw)}")
        header = ProofHeader.from_bytes(raw[:HEADER_LEN])
        d, scale, proof_hash = _PROOF_TAIL.unpack(raw[HEADER_LEN:])
        try:
            difficulty = Difficulty(d, scale)
        except SiliconHealthError as exc:
            raise ProofFormatError(str(exc)) from exc
        return cls(header, difficulty, proof_hash)


@dataclass(frozen=True)
class ProofTiming:
    attempts: int
    elapsed_seconds: float
    energy_joules: float


def device_commitment(device: DeviceProfile, record_digest: bytes) -> bytes:
    return sha256(device.device_secret + record_digest)


def draw_hashrate(device: DeviceProfile, rng: np.random.Generator) -> float:
    """One effective-hashrate sample: Normal(nominal, nominal*cv) truncated to positive."""
    if device.hashrate_cv == 0:
        return device.nominal_hashrate
    sigma = device.nominal_hashrate * device.hashrate_cv
    while True:
        h = rng.normal(device.nominal_hashrate, sigma)
        if h > 0:
            return float(h)


def proof_timing(device: DeviceProfile, attempts: int, hashrate: float) -> ProofTiming:
    elapsed = attempts / hashrate
    return ProofTiming(attempts, elapsed, device.power_watts * elapsed)


def generate_proof(device: DeviceProfile, record_digest: bytes, difficulty: Difficulty,
                   now: int, rng: np.random.Generator,
                   max_nonce: int = 1 << 64) -> Tuple[DhfProof, ProofTiming]:
    """Search nonces from 0 upward; the first one under the target is the proof.

    The nonce depends only on the inputs.  ``rng`` drives the timing model.
    """
    if len(record_digest) != 32:
        raise ValueError("record_digest must be 32 bytes")
    commitment = device_commitment(device, record_digest)
    prefix = _HEADER.pack(record_digest, device.device_id, commitment, now, 0)[:HEADER_LEN - 8]
    target = target_for(difficulty)
    nonce = asic.search_nonce(prefix, target, 0, max_nonce)
    if nonce is None:
        raise NonceSpaceExhausted(f"no nonce below {max_nonce} meets {difficulty}")
    header = ProofHeader(record_digest, device.device_id, commitment, now, nonce)
    proof = DhfProof(header, difficulty, sha256d(header.to_bytes()))
    return proof, proof_timing(device, nonce + 1, draw_hashrate(device, rng))


@dataclass
class DeviceRegistry:
    """Provisioned device secrets, keyed by device id. Registration is serialized."""

    _devices: Dict[bytes, DeviceProfile] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def register(self, device: DeviceProfile) -> None:
        with self._lock:
            existing = self._devices.get(device.device_id)
            if existing is not None and existing.device_secret != device.device_secret:
                raise ValueError(f"device id {device.device_id.hex()} already registered")
            self._devices[device.device_id] = device

    def get(self, device_id: bytes) -> Optional[DeviceProfile]:
        return self._devices.get(device_id)

    def __contains__(self, device_id: bytes) -> bool:
        return device_id in self._devices

    def __len__(self) -> int:
        return len(self._devices)

    def __iter__(self):
        return iter(list(self._devices.values()))


def verify_proof(proof: DhfProof, expected_record: bytes, known_devices: DeviceRegistry,
                 min_difficulty: Optional[Difficulty] = None) -> Verdict:
    """Check binding, hash, work and device commitment, reporting the first failure.

    A proof carries its own difficulty, so callers that enforce a work
    policy pass ``min_difficulty``; proofs claiming less work are rejected
    as insufficient.
    """
    header = proof.header
    if header.record_digest != expected_record:
        return reject(STALE_BINDING)
    if sha256d(header.to_bytes()) != proof.proof_hash:
        return reject(BAD_HASH)
    if digest_int(proof.proof_hash) >= target_for(proof.difficulty):
        return reject(INSUFFICIENT_WORK)
    if min_difficulty is not None and proof.difficulty.work < min_difficulty.work:
        return reject(INSUFFICIENT_WORK)
    device = known_devices.get(header.device_id)
    if device is None:
        return reject(UNKNOWN_DEVICE)
    if device_commitment(device, header.record_digest) != header.device_commitment:
        return reject(BAD_COMMITMENT)
    return ACCEPT
