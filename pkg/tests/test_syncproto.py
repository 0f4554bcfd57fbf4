from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import EASY, FAC_A, FAC_B, T0, World
from oracles import priority_before
from siliconhealth.dhf import make_device
from siliconhealth.merkle import tree_depth
from siliconhealth.records import FLAG_EMERGENCY, FLAG_REFERRAL, HealthRecord, RecordType, make_record_id
from siliconhealth.syncproto import (FRAME_OVERHEAD, AckStatus, AuthFailed, Channel, IncompatibleTree, Interrupted,
                                     MessageKind, MessageLost, OrphanFacility, SyncEndpoint, SyncMessage,
                                     WindowClosed, bandwidth_bound, decode_descent, encode_descent, encode_frame,
                                     locate_record, plan_sync, priority_key, priority_order, resolve_conflict,
                                     run_sync, transfer_queue, upstream_route)
from siliconhealth.ledger import make_version


def endpoints(world, la, lb, **kw):
    ea = SyncEndpoint(la, world.dev_a, np.random.default_rng(1), name="A", **kw)
    eb = SyncEndpoint(lb, world.dev_b, np.random.default_rng(2), name="B", **kw)
    return ea, eb


def two_ledgers(world, na=3, nb=2):
    la, lb = world.ledger(FAC_A), world.ledger(FAC_B)
    for i in range(na):
        world.add(la, text=f"a{i}", created_at=T0 + i)
    for i in range(nb):
        world.add(lb, text=f"b{i}", created_at=T0 + 10 + i)
    return la, lb


def test_equal_ledgers_exchange_only_roots(world):
    la, lb = two_ledgers(world)
    run_sync(*endpoints(world, la, lb))
    report = run_sync(*endpoints(world, la, lb))
    assert report.converged and report.messages == 2 and report.rounds == 1
    assert report.body_bytes_sent == 32 and report.body_bytes_received == 32
    assert report.bytes_sent == report.bytes_received == 32 + FRAME_OVERHEAD


def test_two_way_convergence(world):
    la, lb = two_ledgers(world)
    report = run_sync(*endpoints(world, la, lb))
    assert report.converged and la.root == lb.root and len(la) == 5
    assert report.records_sent == 3 and report.records_received == 2


def test_push_only_moves_upward(world):
    la, lb = two_ledgers(world)
    report = run_sync(*endpoints(world, la, lb), direction="push")
    assert len(lb) == 5 and len(la) == 3 and report.records_received == 0
    assert not report.converged


def test_one_changed_leaf_in_1024(world):
    la = world.ledger(FAC_A)
    for i in range(1024):
        world.add(la, text=str(i))
    lb = world.ledger(FAC_A)
    for v in (la.current(rid) for rid in la.record_ids()):
        lb.merge_version(v.record, v.proof)
    rid = list(la.record_ids())[517]
    changed = replace(la.get(rid), payload=b"edited")
    la.update_record(changed, world.prove(changed, now=T0 + 500))
    plan = plan_sync(la, lb)
    assert plan.record_ids == (rid,) and plan.queue[0][0] == "local"
    assert plan.branch_queries <= tree_depth(1024)
    report = run_sync(*endpoints(world, la, lb))
    assert report.converged and report.records_transferred == 1
    assert report.rounds - 1 == plan.branch_queries


def test_lww_winner_and_history(world):
    la, lb = world.ledger(FAC_A), world.ledger(FAC_A)
    r = world.record(FAC_A)
    p = world.prove(r)
    la.append_record(r, p)
    lb.merge_version(r, p)
    ra, rb = replace(r, payload=b"A edit"), replace(r, payload=b"B edit")
    la.update_record(ra, world.prove(ra, now=T0 + 5))
    lb.update_record(rb, world.prove(rb, device=world.dev_b, now=T0 + 9))
    run_sync(*endpoints(world, la, lb))
    assert la.get(r.record_id).payload == lb.get(r.record_id).payload == b"B edit"
    assert [e.new_leaf for e in la.history(r.record_id)][-2:] == [make_version(ra, la.versions(r.record_id)[1].proof).leaf,
                                                                  la.current(r.record_id).leaf]


def test_resolve_conflict_rules(world):
    r = world.record()
    v1 = make_version(replace(r, payload=b"1"), world.prove(replace(r, payload=b"1"), now=T0 + 1))
    v2 = make_version(replace(r, payload=b"2"), world.prove(replace(r, payload=b"2"), now=T0 + 2))
    assert resolve_conflict(v1, v2)[0] is v2 and resolve_conflict(v2, v1)[0] is v2
    winner, audit = resolve_conflict(v1, v2)
    assert [e.new_leaf for e in audit] == [v1.leaf, v2.leaf]
    assert resolve_conflict(v1, v1) == (v1, [])
    # same timestamp: higher device id wins
    ra, rb = replace(r, payload=b"a"), replace(r, payload=b"b")
    va = make_version(ra, world.prove(ra, device=world.dev_a, now=T0))
    vb = make_version(rb, world.prove(rb, device=world.dev_b, now=T0))
    hi = max((va, vb), key=lambda v: v.editor_device)
    assert resolve_conflict(va, vb)[0] is hi and resolve_conflict(vb, va)[0] is hi


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.booleans()), min_size=2, max_size=6))
def test_lww_commutes_over_sync_direction(edits):
    w = World(seed=len(edits))
    r = w.record(FAC_A, seq=1)
    base = w.prove(r)
    la, lb = w.ledger(FAC_A), w.ledger(FAC_A)
    la.append_record(r, base)
    lb.merge_version(r, base)
    for i, (dt, on_a) in enumerate(edits):
        led, dev = (la, w.dev_a) if on_a else (lb, w.dev_b)
        rec = replace(r, payload=f"e{i}".encode())
        led.merge_version(rec, w.prove(rec, device=dev, now=T0 + 1 + dt))
    la2, lb2 = la.from_bytes(la.to_bytes(), w.registry), lb.from_bytes(lb.to_bytes(), w.registry)
    run_sync(*endpoints(w, la, lb))
    ea, eb = endpoints(w, la2, lb2)
    run_sync(eb, ea)
    assert la.root == lb.root == la2.root == lb2.root


def test_interrupted_then_resumed_sends_only_the_rest(world):
    la, lb = world.ledger(FAC_A), world.ledger(FAC_B)
    for i in range(5):
        world.add(la, created_at=T0 + i)
    ea, eb = endpoints(world, la, lb)
    probe = Channel()
    run_sync(*endpoints(world, la.from_bytes(la.to_bytes(), world.registry),
                        lb.from_bytes(lb.to_bytes(), world.registry)), probe)
    first_transfer = next(i for i, d in enumerate(probe.log) if d.kind == MessageKind.RECORD_TRANSFER)
    # stop right after the first record's ack
    with pytest.raises(Interrupted) as exc:
        run_sync(ea, eb, Channel(cut_after=first_transfer + 2))
    assert exc.value.report.records_transferred == 1 and len(lb) == 1
    report = run_sync(ea, eb)
    assert report.records_transferred == 4 and la.root == lb.root


def test_window_closes_without_partial_frames(world):
    la, lb = two_ledgers(world)
    ch = Channel(bandwidth_bps=9600, latency=0.3, window_end=3.0)
    with pytest.raises(WindowClosed) as exc:
        run_sync(*endpoints(world, la, lb), ch)
    assert ch.now <= 3.0 and exc.value.report.error == "WindowClosed"


def test_lost_message_keeps_progress(world):
    la, lb = two_ledgers(world, na=8, nb=0)
    rng = np.random.default_rng(5)
    ea, eb = endpoints(world, la, lb)
    for _ in range(50):
        try:
            run_sync(ea, eb, Channel(loss=0.2, rng=rng))
            break
        except MessageLost:
            continue
    assert la.root == lb.root


def test_unregistered_peer_is_refused(world, rng):
    la, lb = two_ledgers(world)
    stranger = make_device("lv06", rng)
    ea = SyncEndpoint(la, stranger, rng)
    eb = SyncEndpoint(lb, world.dev_b, rng)
    with pytest.raises(AuthFailed):
        run_sync(ea, eb)


def test_bad_record_is_quarantined(world):
    la, lb = world.ledger(FAC_A), world.ledger(FAC_B)
    r = world.record(FAC_A)
    la.append_record(r, world.prove(r))
    # smuggle in a record whose proof binds a different record
    other = world.record(FAC_A)
    bad = replace(other, payload=b"forged")
    la._versions[bad.record_id] = [make_version(bad, world.prove(other))]
    la._groups[FAC_A].append(bad.record_id)
    la._touch(FAC_A)
    report = run_sync(*endpoints(world, la, lb), direction="push")
    assert report.quarantined == 1 and bad.record_id not in lb and r.record_id in lb
    assert any(status == AckStatus.QUARANTINED for *_, status in report.transfers)
    assert lb.quarantine and lb.quarantine[0][1].endswith("stale-binding")


def test_frame_layout_and_tampering(world):
    la, lb = two_ledgers(world)
    ch = Channel()
    run_sync(*endpoints(world, la, lb), ch)
    sender, raw = ch.transcript[0]
    assert raw[0] == MessageKind.ROOT_HELLO and int.from_bytes(raw[1:5], "big") == 32
    msg = SyncMessage.from_bytes(raw)
    assert msg.to_bytes() == raw and encode_frame(msg.kind, msg.body) == raw[:-56]


def test_descent_codec_roundtrip():
    verdicts = [True, False, True]
    digests = [bytes([i]) * 32 for i in range(4)]
    assert decode_descent(encode_descent(verdicts, digests, None))[:2] == (verdicts, digests)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 12), st.integers(0, 2 ** 16))
def test_bandwidth_bound(na, nb, seed):
    w = World(seed=seed)
    la, lb = w.ledger(FAC_A), w.ledger(FAC_B)
    for i in range(na):
        w.add(la, text="x" * (seed % 50), created_at=T0 + i)
    for i in range(nb):
        w.add(lb, created_at=T0 + i)
    moved = list(la.records()) + list(lb.records())
    depth = max(tree_depth(n) for n in (na, nb) if n)
    report = run_sync(*endpoints(w, la, lb))
    assert report.bytes_sent + report.bytes_received <= bandwidth_bound(moved, depth, 2)


def rec(rid, flags, created, birth):
    return HealthRecord(rid, bytes(32), bytes(8), RecordType.VISIT, created, flags, birth)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5), st.integers(1940, 1945)), max_size=30))
def test_priority_order_matches_comparator(items):
    records = [rec(i.to_bytes(16, "big"), f, c, b) for i, (f, c, b) in enumerate(items)]
    order = priority_order(records)
    for a, b in zip(order, order[1:]):
        assert priority_before(a, b)


def test_priority_examples():
    early = rec(b"\x01" * 16, 0, T0, 1990)
    emergency = rec(b"\x02" * 16, FLAG_EMERGENCY, T0 + 99, 1990)
    referral = rec(b"\x03" * 16, FLAG_REFERRAL, T0 + 50, 1990)
    child = rec(b"\x04" * 16, 0, T0, 2020)
    assert priority_order([early, child, referral, emergency]) == [emergency, referral, child, early]


def test_transfer_queue_is_merged_by_priority(world):
    from siliconhealth.syncproto import InventoryEntry
    la, lb = two_ledgers(world)
    inv_a = [InventoryEntry.of(la.current(r)) for r in la.record_ids()]
    inv_b = [InventoryEntry.of(lb.current(r)) for r in lb.record_ids()]
    q = transfer_queue(inv_a, inv_b)
    assert [e.key for _, e in q] == sorted(e.key for _, e in q)
    assert {o for o, _ in q} == {"A", "B"}
    assert all(o == "A" for o, _ in transfer_queue(inv_a, inv_b, "push"))


class Topo:
    def __init__(self, tiers, parents):
        self.tiers, self.parents = tiers, parents

    def tier(self, f):
        return self.tiers[f]

    def parent(self, f):
        return self.parents.get(f)


def test_upstream_route_and_locate(world):
    topo = Topo({"c": 1, "u": 2, "r": 3, "lost": 1}, {"c": "u", "u": "r"})
    assert upstream_route("c", topo) == "u" and upstream_route("r", topo) is None
    with pytest.raises(OrphanFacility):
        upstream_route("lost", topo)
    ledgers = {"c": world.ledger(), "u": world.ledger(), "r": world.ledger()}
    r = world.add(ledgers["r"])
    assert locate_record(r.record_id, "c", topo, ledgers) == ("r", 2)
    assert locate_record(b"\x00" * 16, "c", topo, ledgers) is None


def _copy(world, led):
    return led.from_bytes(led.to_bytes(), world.registry)


@pytest.mark.parametrize("cut", range(1, 21))
def test_interruption_points_end_byte_identical(cut):
    w = World(seed=99)
    la, lb = w.ledger(FAC_A), w.ledger(FAC_B)
    for i in range(7):
        w.add(la, text=f"a{i}", created_at=T0 + i, flags=FLAG_EMERGENCY if i == 3 else 0)
    for i in range(5):
        w.add(lb, text=f"b{i}", created_at=T0 + 2 * i)
    ref_a, ref_b = _copy(w, la), _copy(w, lb)
    ref = Channel()
    run_sync(*endpoints(w, ref_a, ref_b), ref)
    assert len(ref.log) > 20
    ea, eb = endpoints(w, la, lb)
    with pytest.raises(Interrupted):
        run_sync(ea, eb, Channel(cut_after=cut))
    run_sync(ea, eb)
    assert la.to_bytes() == ref_a.to_bytes() and lb.to_bytes() == ref_b.to_bytes()


def test_golden_transcript():
    import json
    from pathlib import Path
    from golden import FIXTURE, sync_scenario
    frozen = json.loads((Path(__file__).parent / "fixtures" / FIXTURE).read_text())
    ea, eb, channel = sync_scenario()
    report = run_sync(ea, eb, channel)
    assert [{"sender": s, "frame": raw.hex()} for s, raw in channel.transcript] == frozen["frames"]
    assert ea.ledger.root.hex() == eb.ledger.root.hex() == frozen["root"]
    assert (report.bytes_sent, report.bytes_received) == (frozen["bytes_sent"], frozen["bytes_received"])
