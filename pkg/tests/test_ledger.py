import threading
from dataclasses import replace

import pytest

from conftest import EASY, FAC_A, FAC_B, T0, World
from oracles import naive_root
from siliconhealth.hashcore import Difficulty
from siliconhealth.ledger import (EMPTY_ROOT, KNOWN, NEW, SUPERSEDED, UPDATED, DuplicateRecord, Ledger,
                                  LedgerCorruption, RejectedProof, StaleWrite, UnknownRecord)
from siliconhealth.merkle import prove_inclusion, verify_inclusion
from siliconhealth.records import leaf_hash


def test_empty_ledger(world):
    led = world.ledger()
    assert len(led) == 0 and led.root == EMPTY_ROOT


def test_append_and_root_matches_oracle(world):
    led = world.ledger()
    rs = [world.add(led, text=f"r{i}") for i in range(7)]
    assert led.root == naive_root([leaf_hash(r) for r in rs])
    i = led.index_of(rs[3].record_id)
    assert verify_inclusion(led.root, leaf_hash(rs[3]), prove_inclusion(led.tree, i))


def test_duplicate_and_bad_proof(world):
    led = world.ledger()
    r = world.add(led)
    with pytest.raises(DuplicateRecord):
        led.append_record(r, world.prove(r))
    other = world.record()
    with pytest.raises(RejectedProof) as exc:
        led.append_record(other, world.prove(r))
    assert exc.value.reason == "stale-binding"


def test_min_difficulty_policy(world):
    led = Ledger(FAC_A, world.registry, Difficulty(1 << 16, 256))
    r = world.record()
    with pytest.raises(RejectedProof):
        led.append_record(r, world.prove(r))


def test_update_lww_and_history(world):
    led = world.ledger()
    r = world.add(led, text="v1")
    r2 = replace(r, payload=b"v2")
    led.update_record(r2, world.prove(r2, now=T0 + 10))
    assert led.get(r.record_id).payload == b"v2"
    h = led.history(r.record_id)
    assert [e.version for e in h] == [1, 2]
    assert h[1].previous_leaf == h[0].new_leaf == leaf_hash(r)
    r3 = replace(r, payload=b"v3")
    with pytest.raises(StaleWrite):
        led.update_record(r3, world.prove(r3, now=T0 + 5))
    with pytest.raises(UnknownRecord):
        led.update_record(world.record(seq=99), world.prove(world.record(seq=99)))


def test_merge_outcomes(world):
    led = world.ledger()
    r = world.record()
    p = world.prove(r)
    assert led.merge_version(r, p) == NEW
    assert led.merge_version(r, p) == KNOWN
    newer = replace(r, payload=b"later")
    assert led.merge_version(newer, world.prove(newer, now=T0 + 60)) == UPDATED
    older = replace(r, payload=b"earlier")
    assert led.merge_version(older, world.prove(older, now=T0 + 30)) == SUPERSEDED
    assert led.get(r.record_id).payload == b"later"
    assert len(led.history(r.record_id)) == 3


def test_merge_order_independent(world):
    r = world.record()
    vs = [(replace(r, payload=bytes([i])), T0 + t) for i, t in enumerate((5, 50, 20, 35))]
    proofs = [(rec, world.prove(rec, now=t)) for rec, t in vs]
    a, b = world.ledger(), world.ledger()
    for rec, p in proofs:
        a.merge_version(rec, p)
    for rec, p in reversed(proofs):
        b.merge_version(rec, p)
    assert a.to_bytes() == b.to_bytes()
    assert a.get(r.record_id).payload == bytes([1])


def test_canonical_order_groups_facilities(world):
    led = world.ledger()
    rb = world.record(FAC_B)
    led.merge_version(rb, world.prove(rb))
    ra = world.add(led)
    assert list(led.record_ids()) == sorted([ra.record_id, rb.record_id])
    assert led.facilities() == sorted([FAC_A, FAC_B])


def test_persistence_roundtrip(world, tmp_path):
    led = world.ledger()
    for i in range(5):
        world.add(led, text=f"x{i}")
    r = led.get(next(led.record_ids()))
    r2 = replace(r, payload=b"amended")
    led.update_record(r2, world.prove(r2, now=T0 + 99))
    led.quarantine_raw(b"junk", "bad-hash")
    path = tmp_path / "a.ledger"
    led.save(path)
    back = Ledger.load(path, world.registry)
    assert back.to_bytes() == led.to_bytes()
    assert back.root == led.root and back.min_difficulty == EASY
    assert back.quarantine == [(b"junk", "bad-hash")]


def test_corruption_detected(world):
    led = world.ledger()
    for i in range(3):
        world.add(led)
    raw = bytearray(led.to_bytes())
    for pos in (0, 40, len(raw) - 5, len(raw) // 2):
        bad = bytearray(raw)
        bad[pos] ^= 0x01
        with pytest.raises(LedgerCorruption):
            Ledger.from_bytes(bytes(bad), world.registry)
    with pytest.raises(LedgerCorruption):
        Ledger.from_bytes(bytes(raw[:-10]), world.registry)


def test_concurrent_appends_serialize():
    w = World()
    led = w.ledger()
    items = []
    for i in range(40):
        r = w.record(text=str(i))
        items.append((r, w.prove(r)))

    def worker(chunk):
        for r, p in chunk:
            led.append_record(r, p)

    threads = [threading.Thread(target=worker, args=(items[i::4],)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(led) == 40
    assert led.root == naive_root([leaf_hash(r) for r, _ in sorted(items, key=lambda x: x[0].record_id)])
