"""LSB watermarking of 8-bit grayscale images with RS-protected payloads.

The 96-byte payload is RS-coded to 128 bytes (1024 bits) and written as
``R`` copies into pixel LSBs.  Pixel positions come from a permutation of
all pixel indices seeded by the 8-byte key.  Extraction tries each copy on
its own first, then a bitwise majority vote across copies.
"""

import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import rs
from .errors import SiliconHealthError
from .hashcore import sha256

BLOCK_BITS = rs.N * 8
PAYLOAD_LEN = rs.K
_PAYLOAD = struct.Struct(">32sQ16s8s32s")


class WatermarkError(SiliconHealthError):
    pass


class InsufficientCapacity(WatermarkError):
    pass


class AllCopiesFailed(WatermarkError):
    pass


class ImageFormatError(WatermarkError):
    pass


@dataclass(frozen=True)
class GrayImage:
    pixels: np.ndarray  # uint8, shape (height, width)

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 2:
            raise ImageFormatError("pixels must be a 2-D uint8 array")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> int:
        return self.pixels.size

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class WatermarkPayload:
    asic_signature: bytes
    timestamp_utc: int
    patient_id_hash: bytes
    facility_id: bytes
    image_content_hash: bytes

    def to_bytes(self) -> bytes:
        return _PAYLOAD.pack(self.asic_signature, self.timestamp_utc, self.patient_id_hash,
                             self.facility_id, self.image_content_hash)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "WatermarkPayload":
        if len(raw) != PAYLOAD_LEN:
            raise WatermarkError(f"payload must be {PAYLOAD_LEN} bytes")
        return cls(*_PAYLOAD.unpack(raw))

    def describe(self) -> dict:
        return {
            "asic_signature": self.asic_signature.hex(),
            "timestamp_utc": self.timestamp_utc,
            "patient_id_hash": self.patient_id_hash.hex(),
            "facility_id": self.facility_id.hex(),
            "image_content_hash": self.image_content_hash.hex(),
        }


@dataclass(frozen=True)
class Extraction:
    payload: WatermarkPayload
    content_verified: bool
    method: str          # "copy" or "majority"
    copy_index: Optional[int]
    corrections: int


def content_hash(image: GrayImage) -> bytes:
    """sha256 of the row-major pixels with every LSB cleared."""
    return sha256((image.pixels & 0xFE).tobytes())


def embed_positions(n_pixels: int, redundancy: int, key: bytes) -> np.ndarray:
    if len(key) != 8:
        raise ValueError("key must be 8 bytes")
    need = redundancy * BLOCK_BITS
    if redundancy < 1 or need > n_pixels:
        raise InsufficientCapacity(f"{n_pixels} pixels cannot hold {redundancy} x {BLOCK_BITS} bits")
    rng = np.random.default_rng(int.from_bytes(key, "big"))
    return rng.permutation(n_pixels)[:need].reshape(redundancy, BLOCK_BITS)


def embed(image: GrayImage, payload: WatermarkPayload, redundancy: int = 3,
          key: bytes = bytes(8)) -> GrayImage:
    if payload.image_content_hash != content_hash(image):
        raise WatermarkError("payload image_content_hash does not match the image")
    positions = embed_positions(image.size, redundancy, key)
    block = np.frombuffer(rs.rs_encode(payload.to_bytes()), dtype=np.uint8)
    bits = np.unpackbits(block)
    flat = image.pixels.reshape(-1).copy()
    for copy in positions:
        flat[copy] = (flat[copy] & 0xFE) | bits
    return GrayImage(flat.reshape(image.pixels.shape))


def read_copies(image: GrayImage, redundancy: int, key: bytes) -> np.ndarray:
    """The R raw bit-copies, shape (R, 1024)."""
    positions = embed_positions(image.size, redundancy, key)
    return image.pixels.reshape(-1)[positions] & 1


def extract(image: GrayImage, redundancy: int = 3, key: bytes = bytes(8)) -> Extraction:
    bits = read_copies(image, redundancy, key)
    blocks = np.packbits(bits, axis=1)
    decoded, counts = rs.decode_batch(blocks)
    candidates = [("copy", i, decoded[i], counts[i]) for i in range(redundancy)]
    if redundancy >= 3:
        vote = (bits.sum(axis=0) * 2 > redundancy).astype(np.uint8)
        d, c = rs.decode_batch(np.packbits(vote))
        candidates.append(("majority", None, d[0], c[0]))
    for method, index, block, count in candidates:
        if count >= 0:
            payload = WatermarkPayload.from_bytes(block[:rs.K].tobytes())
            return Extraction(payload, payload.image_content_hash == content_hash(image),
                              method, index, int(count))
    raise AllCopiesFailed(f"none of {redundancy} copies decoded")


# -- damage models ------------------------------------------------------

DAMAGE_KINDS = ("lsb_noise", "pixel_noise", "crop_edge")


def crop_band(width: int, height: int, fraction: float) -> int:
    """Smallest border band width whose ring covers at least ``fraction`` of the area."""
    total = width * height
    for b in range(0, (min(width, height) + 1) // 2 + 1):
        inner = max(0, width - 2 * b) * max(0, height - 2 * b)
        if total - inner >= fraction * total:
            return b
    return (min(width, height) + 1) // 2


def damage(image: GrayImage, kind: str, amount: float, seed: int) -> GrayImage:
    if not 0.0 <= amount <= 1.0:
        raise ValueError("damage amount must be in [0, 1]")
    rng = np.random.default_rng(seed)
    px = image.pixels.copy()
    if kind == "lsb_noise":
        px ^= (rng.random(px.shape) < amount).astype(np.uint8)
    elif kind == "pixel_noise":
        hit = rng.random(px.shape) < amount
        px[hit] = rng.integers(0, 256, int(hit.sum()), dtype=np.uint8)
    elif kind == "crop_edge":
        if amount > 0:
            b = crop_band(image.width, image.height, amount)
            px[:b, :] = 0
            px[px.shape[0] - b:, :] = 0
            px[:, :b] = 0
            px[:, px.shape[1] - b:] = 0
    else:
        raise ValueError(f"unknown damage kind {kind!r}; expected one of {DAMAGE_KINDS}")
    return GrayImage(px)


def trial_key(key: bytes, trial: int) -> bytes:
    return sha256(key + trial.to_bytes(4, "big"))[:8]


def recovery_rate(image: GrayImage, payload: WatermarkPayload, kind: str, amount: float,
                  redundancy: int = 3, key: bytes = bytes(8), trials: int = 100,
                  seed: int = 0) -> float:
    """Fraction of seeded damage trials after which the exact payload comes back.

    Each trial embeds under its own key derived from ``key`` so that
    deterministic damage (edge crops) still averages over pixel layouts.
    """
    ok = 0
    for t in range(trials):
        k = trial_key(key, t)
        marked = embed(image, payload, redundancy, k)
        try:
            ok += extract(damage(marked, kind, amount, seed + t), redundancy, k).payload == payload
        except AllCopiesFailed:
            pass
    return ok / trials


def psnr(a: GrayImage, b: GrayImage) -> float:
    mse = np.mean((a.pixels.astype(np.float64) - b.pixels.astype(np.float64)) ** 2)
    return float("inf") if mse == 0 else 10 * np.log10(255.0 ** 2 / mse)


# -- payload construction -----------------------------------------------

def make_payload(image: GrayImage, device, facility_id: bytes, patient_pseudonym: bytes,
                 now: int, difficulty, rng):
    """Payload whose signature is the proof hash of a device proof over the content hash."""
    from .dhf import generate_proof
    from .records import pseudonym_hash16

    digest = content_hash(image)
    proof, _ = generate_proof(device, digest, difficulty, now, rng)
    payload = WatermarkPayload(proof.proof_hash, now, pseudonym_hash16(patient_pseudonym),
                               facility_id, digest)
    return payload, proof


# -- synthetic images -----------------------------------------------------

def synthetic_image(kind: str, size: int = 256, seed: int = 0) -> GrayImage:
    """Deterministic test imagery: gradient, phantom (nested ellipses) or noise."""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    if kind == "gradient":
        px = 255 * (0.6 * x + 0.4 * y)
    elif kind == "phantom":
        px = np.full((size, size), 20.0)
        for cx, cy, rx, ry, level in ((0.5, 0.5, 0.42, 0.47, 180), (0.5, 0.5, 0.38, 0.43, 90),
                                      (0.38, 0.45, 0.08, 0.14, 220), (0.62, 0.45, 0.1, 0.15, 200),
                                      (0.5, 0.7, 0.05, 0.05, 250)):
            px[((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1] = level
        px += np.random.default_rng(seed).normal(0, 4, px.shape)
    elif kind == "noise":
        px = np.random.default_rng(seed).integers(0, 256, (size, size))
    else:
        raise ValueError(f"unknown synthetic image kind {kind!r}")
    return GrayImage(np.clip(np.rint(px), 0, 255).astype(np.uint8))


# -- PGM (P5) -------------------------------------------------------------

_PGM_HEADER = re.compile(rb"^P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+"
                         rb"(?:#[^\n]*\n\s*)*(\d+)\s")


def encode_pgm(image: GrayImage) -> bytes:
    return b"P5\n%d %d\n255\n" % (image.width, image.height) + image.pixels.tobytes()


def decode_pgm(raw: bytes) -> GrayImage:
    m = _PGM_HEADER.match(raw)
    if not m:
        raise ImageFormatError("not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ImageFormatError("only 8-bit PGM (maxval 255) is supported")
    data = raw[m.end():]
    if len(data) != w * h:
        raise ImageFormatError(f"expected {w * h} pixel bytes, found {len(data)}")
    return GrayImage(np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy())


def read_pgm(path) -> GrayImage:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path, image: GrayImage):
    Path(path).write_bytes(encode_pgm(image))
