"""SHA-256 primitives, difficulty targets and the expected-work model."""

import hashlib
from dataclasses import dataclass

from .errors import SiliconHealthError

DIGEST_LEN = 32
NONCE_SPACE = 1 << 32
HASH_SPACE = 1 << 256


class DifficultyError(SiliconHealthError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def sha256d(data: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


def digest_int(digest: bytes) -> int:
    if len(digest) != DIGEST_LEN:
        raise ValueError(f"digest must be {DIGEST_LEN} bytes, got {len(digest)}")
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class Difficulty:
    """Proof difficulty. Expected work is ``d * scale`` hash evaluations.

    ``scale`` is the nonce-space factor; the default of 2**32 is the
    mining convention, smaller values give desk-scale proofs.
    """

    d: int
    scale: int = NONCE_SPACE

    def __post_init__(self):
        if self.d < 1 or self.scale < 1:
            raise DifficultyError(f"difficulty terms must be >= 1: d={self.d} scale={self.scale}")
        if self.d * self.scale > HASH_SPACE:
            raise DifficultyError("d * scale exceeds 2**256")

    @property
    def work(self) -> int:
        return self.d * self.scale


def target_for(difficulty: Difficulty) -> int:
    """Proof hashes, read as big-endian integers, must be strictly below this."""
    work = difficulty.d * difficulty.scale
    if work > HASH_SPACE:
        raise DifficultyError("d * scale exceeds 2**256")
    return HASH_SPACE // work


def meets_target(digest: bytes, difficulty: Difficulty) -> bool:
    return digest_int(digest) < target_for(difficulty)


def expected_attempts(difficulty: Difficulty) -> float:
    return float(difficulty.d * difficulty.scale)


def expected_proof_time(difficulty: Difficulty, hashrate: float) -> float:
    """Mean seconds per proof for a device hashing at ``hashrate`` H/s."""
    if hashrate <= 0:
        raise ValueError("hashrate must be positive")
    return expected_attempts(difficulty) / hashrate
