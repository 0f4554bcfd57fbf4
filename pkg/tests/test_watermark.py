from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import EASY, FAC_A, T0
from siliconhealth import rs
from siliconhealth.dhf import verify_proof
from siliconhealth.watermark import (BLOCK_BITS, AllCopiesFailed, GrayImage, ImageFormatError, InsufficientCapacity,
                                     WatermarkError, WatermarkPayload, content_hash, crop_band, damage,
                                     decode_pgm, embed, embed_positions, encode_pgm, extract, make_payload, psnr,
                                     read_copies, read_pgm, recovery_rate, synthetic_image)

CORPUS = sorted((Path(__file__).parent / "fixtures" / "images").glob("*.pgm"))
KEY = b"\x13" * 8


def payload_for(image, seed=0):
    rng = np.random.default_rng(seed)
    return WatermarkPayload(rng.bytes(32), T0 + seed, rng.bytes(16), FAC_A, content_hash(image))


def test_corpus_is_present():
    assert len(CORPUS) >= 4


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.name)
@pytest.mark.parametrize("redundancy", [1, 2, 3])
def test_round_trip_on_corpus(path, redundancy):
    image = read_pgm(path)
    p = payload_for(image)
    marked = embed(image, p, redundancy, KEY)
    out = extract(marked, redundancy, KEY)
    assert out.payload == p and out.content_verified and out.corrections == 0
    assert out.method == "copy" and out.copy_index == 0


def test_only_lsbs_change():
    image = synthetic_image("phantom", 128, seed=4)
    marked = embed(image, payload_for(image), 3, KEY)
    diff = np.abs(marked.pixels.astype(int) - image.pixels.astype(int))
    assert diff.max() <= 1
    assert np.array_equal(marked.pixels & 0xFE, image.pixels & 0xFE)
    assert content_hash(marked) == content_hash(image)


def test_capacity_fraction_on_a_megapixel():
    image = synthetic_image("gradient", 1024)
    marked = embed(image, payload_for(image), 1, KEY)
    changed = int(np.count_nonzero(marked.pixels != image.pixels))
    assert changed <= 1024
    assert changed / (8 * image.size) <= 0.000123
    assert psnr(image, embed(image, payload_for(image), 3, KEY)) >= 51


def test_insufficient_capacity():
    image = synthetic_image("noise", 55)  # 3025 pixels < 3 x 1024
    with pytest.raises(InsufficientCapacity):
        embed(image, payload_for(image), 3, KEY)
    embed(image, payload_for(image), 2, KEY)


def test_positions_are_distinct_and_keyed():
    pos = embed_positions(4096, 3, KEY)
    assert pos.shape == (3, BLOCK_BITS) and len(np.unique(pos)) == 3 * BLOCK_BITS
    assert np.array_equal(pos, embed_positions(4096, 3, KEY))
    assert not np.array_equal(pos, embed_positions(4096, 3, b"\x14" * 8))


def test_wrong_key_does_not_decode():
    image = synthetic_image("phantom", 128)
    marked = embed(image, payload_for(image), 3, KEY)
    with pytest.raises(AllCopiesFailed):
        extract(marked, 3, b"\x99" * 8)


def test_content_hash_mismatch_is_refused():
    image = synthetic_image("phantom", 128)
    with pytest.raises(WatermarkError):
        embed(image, payload_for(synthetic_image("noise", 128)), 1, KEY)


def test_content_tamper_is_flagged_separately():
    image = synthetic_image("phantom", 128)
    p = payload_for(image)
    marked = embed(image, p, 3, KEY)
    px = marked.pixels.copy()
    px[40:60, 40:60] ^= 0x10  # above the LSB plane
    out = extract(GrayImage(px), 3, KEY)
    assert out.payload == p and not out.content_verified


def corrupt_symbols(image, redundancy, per_copy, rng):
    """Flip whole bytes of the coded block inside each stored copy."""
    pos = embed_positions(image.size, redundancy, KEY)
    flat = image.pixels.reshape(-1).copy()
    for copy in pos:
        for sym in rng.choice(128, size=per_copy, replace=False):
            bits = copy[8 * sym:8 * sym + 8]
            flat[bits] ^= rng.integers(0, 2, 8).astype(np.uint8) | (np.arange(8) == rng.integers(8))
    return GrayImage(flat.reshape(image.pixels.shape))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 16), st.integers(0, 2 ** 31))
def test_sixteen_symbols_in_every_copy(nsym, seed):
    image = synthetic_image("gradient", 96)
    p = payload_for(image, seed % 7)
    hurt = corrupt_symbols(embed(image, p, 3, KEY), 3, nsym, np.random.default_rng(seed))
    out = extract(hurt, 3, KEY)
    assert out.payload == p and out.corrections == nsym


def test_majority_vote_rescues_when_every_copy_fails():
    image = synthetic_image("gradient", 96)
    p = payload_for(image)
    marked = embed(image, p, 3, KEY)
    pos = embed_positions(image.size, 3, KEY)
    flat = marked.pixels.reshape(-1).copy()
    # 20 symbols wrong per copy, disjoint across copies
    for c, copy in enumerate(pos):
        for sym in range(20 * c, 20 * c + 20):
            flat[copy[8 * sym]] ^= 1
    hurt = GrayImage(flat.reshape(image.pixels.shape))
    _, counts = rs.decode_batch(np.packbits(read_copies(hurt, 3, KEY), axis=1))
    assert (counts == -1).all()
    out = extract(hurt, 3, KEY)
    assert out.payload == p and out.method == "majority"


def test_metadata_strip_keeps_everything():
    image = read_pgm(CORPUS[0])
    p = payload_for(image)
    raw = encode_pgm(embed(image, p, 3, KEY))
    annotated = raw.replace(b"P5\n", b"P5\n# scanner: model X\n# taken 2024-03-01\n", 1)
    assert decode_pgm(annotated) == decode_pgm(raw)
    assert extract(decode_pgm(annotated), 3, KEY).payload == p


@pytest.mark.parametrize("kind", ["lsb_noise", "pixel_noise", "crop_edge"])
def test_zero_damage_is_identity(kind):
    image = synthetic_image("phantom", 64)
    assert damage(image, kind, 0.0, seed=5) == image


def test_damage_models():
    image = synthetic_image("phantom", 256)
    flipped = damage(image, "lsb_noise", 0.25, seed=1)
    frac = np.mean((flipped.pixels ^ image.pixels) == 1)
    assert abs(frac - 0.25) < 0.01 and np.array_equal(flipped.pixels & 0xFE, image.pixels & 0xFE)
    noisy = damage(image, "pixel_noise", 0.3, seed=1)
    assert abs(np.mean(noisy.pixels != image.pixels) - 0.3 * 255 / 256) < 0.01
    cropped = damage(image, "crop_edge", 0.1, seed=1)
    b = crop_band(256, 256, 0.1)
    assert (cropped.pixels[:b] == 0).all() and (cropped.pixels[:, -b:] == 0).all()
    assert np.array_equal(cropped.pixels[b:-b, b:-b], image.pixels[b:-b, b:-b])
    with pytest.raises(ValueError):
        damage(image, "jpeg", 0.1, seed=1)
    with pytest.raises(ValueError):
        damage(image, "lsb_noise", 1.5, seed=1)


@given(st.integers(2, 300), st.integers(2, 300), st.floats(0.0, 1.0))
def test_crop_band_is_minimal(w, h, f):
    b = crop_band(w, h, f)
    ring = lambda k: w * h - max(0, w - 2 * k) * max(0, h - 2 * k)
    assert ring(b) >= f * w * h - 1e-9
    assert b == 0 or ring(b - 1) < f * w * h


def test_light_lsb_noise_recovers():
    image = synthetic_image("phantom", 128)
    assert recovery_rate(image, payload_for(image), "lsb_noise", 0.02, trials=20, key=KEY) == 1.0


def test_make_payload_binds_a_device_proof(world):
    image = synthetic_image("phantom", 128)
    payload, proof = make_payload(image, world.dev_a, FAC_A, b"patient-7", T0, EASY, world.rng)
    assert payload.asic_signature == proof.proof_hash
    assert verify_proof(proof, content_hash(image), world.registry)
    assert WatermarkPayload.from_bytes(payload.to_bytes()) == payload
    assert len(payload.to_bytes()) == 96


@pytest.mark.parametrize("raw", [b"P6\n2 2\n255\n" + bytes(12), b"P5\n2 2\n65535\n" + bytes(8),
                                 b"P5\n4 4\n255\n" + bytes(3)])
def test_pgm_rejects(raw):
    with pytest.raises(ImageFormatError):
        decode_pgm(raw)
