"""Regenerate tests/fixtures/hkdf_vectors.json with the `cryptography` HKDF.

The vectors are computed without touching siliconhealth, so they act as an
independent reference for session-key derivation.
"""

import json
import struct
from pathlib import Path

import numpy as np
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

INFO = b"SiliconHealth-v1"
OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "hkdf_vectors.json"


def reference(secret: bytes, window_start: int, nonce: bytes) -> bytes:
    salt = struct.pack(">Q", window_start) + nonce
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=salt, info=INFO).derive(secret)


def main():
    rng = np.random.default_rng(20260101)
    vectors = []
    for i in range(16):
        secret, nonce = rng.bytes(32), rng.bytes(16)
        start = int(rng.integers(0, 2 ** 40)) if i else 0
        vectors.append({"device_secret": secret.hex(), "window_start": start, "nonce": nonce.hex(),
                        "key": reference(secret, start, nonce).hex()})
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({"info": INFO.decode(), "vectors": vectors}, indent=2) + "\n")
    print(f"wrote {len(vectors)} vectors to {OUT}")


if __name__ == "__main__":
    main()
