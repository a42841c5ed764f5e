from fractions import Fraction

import pytest

from ibcsim.channel import Order, commitment_path
from ibcsim.client import get_client_state
from ibcsim.datagrams import PACKET_KINDS
from ibcsim.relayer import FaultProfile, Relayer
from ibcsim.transfer import PORT

from netutil import linked


def kinds(dgs):
    return [d.kind.name for d in dgs]


def scan(pair, relayer=None):
    r = relayer or pair.relayer
    for ledger in (pair.a, pair.b):
        r._scan(ledger)


def fund(pair, amount=1000):
    pair.ta.mint_genesis("alice", "atom", amount)
    pair.tb.register_account("bob")


def test_nothing_pending():
    p = linked()
    scan(p)
    assert p.relayer.pending_datagrams(p.a, p.b) == []
    assert p.relayer.pending_datagrams(p.b, p.a) == []


def test_update_precedes_recv():
    p = linked()
    fund(p)
    p.ta.send_transfer("atom", 5, "alice", "bob", "ch-0")
    p.blocks()
    scan(p)
    dgs = p.relayer.pending_datagrams(p.a, p.b)
    assert kinds(dgs) == ["ClientUpdate", "PacketRecv"]
    assert dgs[0].header.block.height == dgs[1].proof_height == p.a.height


def test_ack_pending_while_commitment_exists():
    p = linked()
    fund(p)
    p.ta.send_transfer("atom", 5, "alice", "bob", "ch-0")
    p.blocks()
    scan(p)
    dgs = p.relayer.pending_datagrams(p.a, p.b)
    assert p.b.submit(dgs).ok
    p.blocks()
    scan(p)
    back = p.relayer.pending_datagrams(p.b, p.a)
    assert [k for k in kinds(back) if k != "ClientUpdate"] == ["PacketAck"]
    assert p.a.submit(back).ok
    p.blocks()
    scan(p)
    assert "PacketAck" not in kinds(p.relayer.pending_datagrams(p.b, p.a))


def test_honest_relayer_completes_transfers():
    p = linked()
    fund(p)
    for i in range(5):
        p.ta.send_transfer("atom", 10 + i, "alice", "bob", "ch-0")
    entries = p.step(4)
    assert all(e.ok for e in entries)
    assert p.tb.balance("bob", "transfer/ch-0/atom") == sum(range(10, 15))
    assert not list(p.a.ibc_items("commitments/"))


def test_duplicates_abort_second_submission():
    p = linked()
    fund(p)
    dup = Relayer("dup", p.a, p.b, faults=FaultProfile(dup=Fraction(1), seed=3))
    p.ta.send_transfer("atom", 5, "alice", "bob", "ch-0")
    p.blocks()
    entries = dup.relay_once().entries
    assert len(entries) % 2 == 0 and entries
    for first, second in zip(entries[::2], entries[1::2]):
        assert first.kind == second.kind
        assert first.ok and not second.ok
    assert p.tb.balance("bob", "transfer/ch-0/atom") == 5


def test_corruption_is_always_rejected():
    p = linked(Order.ORDERED)
    fund(p)
    bad = Relayer("bad", p.a, p.b, faults=FaultProfile(corrupt=Fraction(1), seed=9))
    for i in range(4):
        p.ta.send_transfer("atom", 1 + i, "alice", "bob", "ch-0")
    packet_entries = []
    for _ in range(4):
        entries = bad.relay_once().entries
        packet_entries += [e for e in entries if e.kind.startswith("Packet")]
        p.blocks()
    assert packet_entries and not any(e.ok for e in packet_entries)
    assert p.tb.accounts_by_owner()["bob"] == {}
    # an honest relayer still finishes the job
    p.step(4)
    assert p.tb.balance("bob", "transfer/ch-0/atom") == 10


def test_fault_injection_is_seeded():
    dgs = list(range(50))
    profile = FaultProfile(drop=Fraction(1, 3), dup=Fraction(1, 4), reorder=Fraction(1), seed=42)
    p = linked()
    r1 = Relayer("x", p.a, p.b, faults=profile)
    r2 = Relayer("x", p.a, p.b, faults=profile)
    r3 = Relayer("x", p.a, p.b, faults=FaultProfile(drop=Fraction(1, 3), seed=43))
    assert r1.apply_faults(dgs) == r2.apply_faults(dgs)
    assert r1.apply_faults(dgs) != r3.apply_faults(dgs)
    assert Relayer("x", p.a, p.b).apply_faults(dgs) == dgs


@pytest.mark.parametrize("field", ["drop", "dup", "reorder", "corrupt"])
def test_fault_probabilities_are_bounded(field):
    with pytest.raises(ValueError):
        FaultProfile(**{field: Fraction(3, 2)})
    assert not FaultProfile(**{field: Fraction(1, 2)}).honest


def test_relayer_config_validation():
    p = linked()
    with pytest.raises(ValueError):
        Relayer("x", p.a, p.b, mode="telepathy")
    with pytest.raises(ValueError):
        Relayer("x", p.a, p.b, poll_every=0)


def test_query_mode_relays_gap():
    p = linked(Order.ORDERED)
    fund(p)
    p.relayer = Relayer("q", p.a, p.b, mode="query")
    for i in range(3):
        p.ta.send_transfer("atom", 1, "alice", "bob", "ch-0")
    p.step(4)
    assert p.tb.balance("bob", "transfer/ch-0/atom") == 3
    assert not list(p.a.ibc_items("commitments/"))


def test_poll_interval():
    p = linked()
    fund(p)
    slow = Relayer("slow", p.a, p.b, poll_every=3)
    slow.relay_once()
    p.ta.send_transfer("atom", 1, "alice", "bob", "ch-0")
    p.blocks()
    assert slow.relay_once().entries == []
    p.blocks()
    assert slow.relay_once().entries == []
    p.blocks()
    assert any(e.kind == "PacketRecv" and e.ok for e in slow.relay_once().entries)


def test_paused_relayer_is_idle():
    p = linked()
    fund(p)
    p.relayer.paused = True
    p.ta.send_transfer("atom", 1, "alice", "bob", "ch-0")
    assert p.step(3) == []
    p.relayer.paused = False
    p.step(3)
    assert p.tb.balance("bob", "transfer/ch-0/atom") == 1


def test_parallel_relayers_agree_on_state():
    def run(n):
        p = linked()
        fund(p)
        relayers = [Relayer(f"r{i}", p.a, p.b, bundle=bool(i % 2)) for i in range(n)]
        for round_ in range(6):
            if round_ < 3:
                p.ta.send_transfer("atom", 7, "alice", "bob", "ch-0")
            for r in relayers:
                r.relay_once()
            p.blocks()
        return p.ta.accounts_by_owner(), p.tb.accounts_by_owner(), p.ta.escrows()

    assert run(1) == run(3)


def test_bundled_failure_falls_back_to_singles():
    p = linked()
    fund(p)
    r = Relayer("b", p.a, p.b, bundle=True)
    p.ta.send_transfer("atom", 1, "alice", "bob", "ch-0")
    p.blocks()
    scan(p, r)
    dgs = r.pending_datagrams(p.a, p.b)
    assert p.b.submit(dgs[:1]).ok  # someone else already updated the client
    entries = r.relay_once().entries
    assert any(e.kind == "PacketRecv" and e.ok for e in entries)


def test_timeout_for_packet_stuck_behind_halt():
    p = linked()
    fund(p)
    p.b.halt()
    p.ta.send_transfer("atom", 9, "alice", "bob", "ch-0", timeout_timestamp=p.b.current_timestamp + 20)
    p.step(5)
    assert p.ta.balance("alice", "atom") == 991
    p.b.resume(next_timestamp=p.b.latest_block.timestamp + 100)
    p.step(4)
    assert p.ta.balance("alice", "atom") == 1000
    assert p.tb.balance("bob", "transfer/ch-0/atom") == 0


def test_no_timeout_for_packets_received_in_time():
    p = linked()
    fund(p)
    p.ta.send_transfer("atom", 3, "alice", "bob", "ch-0", timeout_height=p.b.height + 5)
    p.step(1)
    for _ in range(10):
        scan(p)
        assert not any(k.startswith("PacketTimeout")
                       for k in kinds(p.relayer.pending_datagrams(p.b, p.a)))
        p.step(1)
    assert p.tb.balance("bob", "transfer/ch-0/atom") == 3


def test_timeout_on_close_for_in_flight_packet():
    p = linked(Order.ORDERED)
    fund(p)
    p.ta.send_transfer("atom", 3, "alice", "bob", "ch-0", timeout_height=p.b.height + 500)
    with p.b.transaction():
        p.ctx_b.close_channel("ch-0")
    p.blocks()
    scan(p)
    assert "PacketTimeoutOnClose" in kinds(p.relayer.pending_datagrams(p.b, p.a))
    p.step(2)
    assert p.ta.balance("alice", "atom") == 1000
    assert p.a.ibc_get(commitment_path(PORT, "ch-0", 1)) is None


def test_equivocation_is_reported_and_freezes_client():
    p = linked()
    p.b.equivocate()
    scan(p)
    assert kinds(p.relayer.pending_datagrams(p.b, p.a)) == ["ClientMisbehaviour"]
    p.step(1)
    assert get_client_state(p.a, "client-b").frozen
    # the frozen client takes no further headers
    frozen_at = get_client_state(p.a, "client-b").latest_height
    entries = p.step(3)
    assert not any(e.ok and e.target == "A" and e.kind == "ClientUpdate" for e in entries)
    assert get_client_state(p.a, "client-b").latest_height == frozen_at


def test_packet_datagram_kinds():
    assert {k.name for k in PACKET_KINDS} == {
        "PacketRecv", "PacketAck", "PacketTimeout", "PacketTimeoutOnClose", "PacketCleanup"}
