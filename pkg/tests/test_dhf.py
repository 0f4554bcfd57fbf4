import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from siliconhealth.dhf import (BAD_COMMITMENT, BAD_HASH, DEVICE_MODELS, HEADER_LEN, INSUFFICIENT_WORK, PROOF_LEN,
                               STALE_BINDING, UNKNOWN_DEVICE, DeviceRegistry, DhfProof, NonceSpaceExhausted,
                               ProofFormatError, ProofHeader, device_commitment, generate_proof, make_device,
                               proof_timing, verify_proof)
from siliconhealth.hashcore import Difficulty, digest_int, sha256d, target_for

D = Difficulty(16, 256)


@pytest.fixture
def setup(rng):
    dev = make_device("lv06", rng)
    reg = DeviceRegistry()
    reg.register(dev)
    digest = rng.bytes(32)
    proof, timing = generate_proof(dev, digest, D, 1_700_000_000, rng)
    return dev, reg, digest, proof, timing


def test_roundtrip_verifies(setup):
    dev, reg, digest, proof, _ = setup
    assert verify_proof(proof, digest, reg)
    assert digest_int(proof.proof_hash) < target_for(D)
    assert proof.proof_hash == sha256d(proof.header.to_bytes())


def test_wire_sizes(setup):
    proof = setup[3]
    assert len(proof.header.to_bytes()) == HEADER_LEN == 88
    assert len(proof.to_bytes()) == PROOF_LEN == 136
    assert DhfProof.from_bytes(proof.to_bytes()) == proof


def test_nonce_is_first_qualifying(setup):
    dev, _, digest, proof, timing = setup
    h = proof.header
    for n in range(h.nonce):
        trial = ProofHeader(h.record_digest, h.device_id, h.device_commitment, h.timestamp, n)
        assert digest_int(sha256d(trial.to_bytes())) >= target_for(D)
    assert timing.attempts == h.nonce + 1


def test_deterministic_nonce(rng):
    dev = make_device("s9", rng)
    a, _ = generate_proof(dev, bytes(32), D, 5, np.random.default_rng(1))
    b, _ = generate_proof(dev, bytes(32), D, 5, np.random.default_rng(2))
    assert a == b


def test_rejection_reasons(setup, rng):
    dev, reg, digest, proof, _ = setup
    assert verify_proof(proof, rng.bytes(32), reg).reason == STALE_BINDING
    h = proof.header
    bumped = DhfProof(ProofHeader(h.record_digest, h.device_id, h.device_commitment, h.timestamp + 1, h.nonce),
                      proof.difficulty, proof.proof_hash)
    assert verify_proof(bumped, digest, reg).reason == BAD_HASH
    assert verify_proof(proof, digest, DeviceRegistry()).reason == UNKNOWN_DEVICE
    assert verify_proof(proof, digest, reg, Difficulty(1 << 20, 256)).reason == INSUFFICIENT_WORK
    # a proof claiming more work than it did
    lying = DhfProof(proof.header, Difficulty(1 << 40, 256), proof.proof_hash)
    if digest_int(proof.proof_hash) >= target_for(lying.difficulty):
        assert verify_proof(lying, digest, reg).reason == INSUFFICIENT_WORK


def test_commitment_binds_device(setup, rng):
    dev, reg, digest, _, _ = setup
    impostor = make_device("lv06", rng, device_id=dev.device_id)
    forged, _ = generate_proof(impostor, digest, D, 1, rng)
    assert verify_proof(forged, digest, reg).reason == BAD_COMMITMENT
    assert device_commitment(dev, digest) != device_commitment(impostor, digest)


def test_nonce_space_exhausted(rng):
    dev = make_device("usb", rng)
    with pytest.raises(NonceSpaceExhausted):
        generate_proof(dev, bytes(32), Difficulty(1 << 60, 1), 0, rng, max_nonce=64)


def test_registry_rejects_conflicting_ids(rng):
    dev = make_device("lv06", rng)
    reg = DeviceRegistry()
    reg.register(dev)
    reg.register(dev)  # idempotent
    with pytest.raises(Exception):
        reg.register(make_device("lv06", rng, device_id=dev.device_id))
    assert len(reg) == 1 and dev.device_id in reg


def test_device_models_cover_tiers(rng):
    assert {make_device(m, rng).tier for m in DEVICE_MODELS} == {0, 1, 2, 3}
    with pytest.raises(ValueError):
        make_device("rtx3090", rng)


def test_timing_is_power_times_time(rng):
    dev = make_device("lv06", rng)
    t = proof_timing(dev, 1000, 100.0)
    assert t.elapsed_seconds == 10.0 and t.energy_joules == pytest.approx(130.0)


@settings(max_examples=30, deadline=None)
@given(st.binary(min_size=136, max_size=136))
def test_parse_never_crashes_unexpectedly(raw):
    try:
        DhfProof.from_bytes(raw)
    except ProofFormatError:
        pass


def test_bad_lengths():
    with pytest.raises(ProofFormatError):
        DhfProof.from_bytes(bytes(135))
    with pytest.raises(ProofFormatError):
        ProofHeader.from_bytes(bytes(87))
