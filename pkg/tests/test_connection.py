from dataclasses import replace

import pytest

from ibcsim import connection as conns
from ibcsim.connection import ConnState, find_connection, get_connection
from ibcsim.datagrams import ClientCreate, ConnOpenInit
from ibcsim.errors import BadState, IdentifierInUse, InvalidIdentifier, NoSuchClient
from ibcsim.ledger import Ledger
from ibcsim.relayer import Relayer

from netutil import Pair, deliver, pending


def states(pair, conn="conn-0"):
    out = []
    for ledger in (pair.a, pair.b):
        end = find_connection(ledger, conn)
        out.append(end.state if end else None)
    return tuple(out)


def init(pair, conn="conn-0", on=None):
    host = on or pair.a
    client, cp_client = ("client-b", "client-a") if host is pair.a else ("client-a", "client-b")
    res = host.submit([ConnOpenInit(conn, conn, "ibc", client, cp_client)])
    pair.blocks()
    return res


def test_full_handshake_follows_table():
    p = Pair()
    assert init(p).ok
    assert states(p) == (ConnState.INIT, None)
    assert deliver(p, p.a, p.b, "ConnOpenTry").ok
    assert states(p) == (ConnState.INIT, ConnState.TRYOPEN)
    assert deliver(p, p.b, p.a, "ConnOpenAck").ok
    assert states(p) == (ConnState.OPEN, ConnState.TRYOPEN)
    assert deliver(p, p.a, p.b, "ConnOpenConfirm").ok
    assert states(p) == (ConnState.OPEN, ConnState.OPEN)
    ea, eb = get_connection(p.a, "conn-0"), get_connection(p.b, "conn-0")
    assert (ea.client_id, ea.counterparty_client_id) == (eb.counterparty_client_id, eb.client_id)
    assert ea.version == eb.version == "ibc-1"


def test_init_stores_compatible_versions():
    p = Pair()
    init(p)
    assert get_connection(p.a, "conn-0").versions == conns.get_compatible_versions()


def test_init_errors():
    p = Pair()
    assert init(p).ok
    assert init(p).reason == IdentifierInUse.__name__
    bad = p.a.submit([ConnOpenInit("conn/1", "x", "ibc", "client-b", "client-a")])
    assert bad.reason == InvalidIdentifier.__name__
    missing = p.a.submit([ConnOpenInit("conn-2", "x", "ibc", "client-zz", "client-a")])
    assert missing.reason == NoSuchClient.__name__


def test_try_with_wrong_counterparty_id():
    p = Pair()
    init(p)
    res = deliver(p, p.a, p.b, "ConnOpenTry",
                  lambda dg: replace(dg, counterparty_connection_id="conn-9"))
    assert res.reason == "ProofFailure"


def test_try_future_consensus_height():
    p = Pair()
    init(p)
    res = deliver(p, p.a, p.b, "ConnOpenTry",
                  lambda dg: replace(dg, consensus_height=p.b.height + 5))
    assert res.reason == "FutureConsensusHeight"


def test_try_incompatible_versions():
    p = Pair()
    init(p)
    res = deliver(p, p.a, p.b, "ConnOpenTry",
                  lambda dg: replace(dg, counterparty_versions=("ibc-9",)))
    # the proof covers the stored versions, so either check may fire first
    assert res.reason in ("IncompatibleVersion", "ProofFailure")
    assert states(p) == (ConnState.INIT, None)


def test_ack_replay_on_open_end():
    p = Pair()
    init(p)
    deliver(p, p.a, p.b, "ConnOpenTry")
    updates, ack = p.relayer.pending_datagrams(p.b, p.a)[:-1], p.relayer.pending_datagrams(p.b, p.a)[-1]
    assert p.a.submit(updates + [ack]).ok
    p.blocks()
    assert p.a.submit([ack]).reason == "BadState"


def test_ack_with_unknown_version():
    p = Pair()
    init(p)
    deliver(p, p.a, p.b, "ConnOpenTry")
    res = deliver(p, p.b, p.a, "ConnOpenAck", lambda dg: replace(dg, version="ibc-7"))
    assert res.reason in ("IncompatibleVersion", "ProofFailure")
    assert states(p)[0] == ConnState.INIT


def test_confirm_with_stale_proof():
    p = Pair()
    init(p)
    _, try_ = pending(p, p.a, p.b, "ConnOpenTry")
    stale = try_.proof_height  # B's client knows this height; A was still INIT there
    deliver(p, p.a, p.b, "ConnOpenTry")
    deliver(p, p.b, p.a, "ConnOpenAck")
    res = deliver(p, p.a, p.b, "ConnOpenConfirm", lambda dg: replace(
        dg, proof_ack=p.a.prove(stale, "connections/conn-0"), proof_height=stale))
    assert res.reason == "ProofFailure"
    assert deliver(p, p.a, p.b, "ConnOpenConfirm").ok
    again = conns.conn_open_confirm
    with pytest.raises(BadState):
        again(p.b, "conn-0", p.a.prove(p.a.height, "connections/conn-0"), p.a.height)


def test_crossing_hellos():
    p = Pair()
    assert init(p, on=p.a).ok
    assert init(p, on=p.b).ok
    assert states(p) == (ConnState.INIT, ConnState.INIT)
    # both Try datagrams are built before either lands
    to_b, to_a = pending(p, p.a, p.b, "ConnOpenTry"), pending(p, p.b, p.a, "ConnOpenTry")
    assert p.b.submit(to_b[0] + [to_b[1]]).ok
    assert p.a.submit(to_a[0] + [to_a[1]]).ok
    p.blocks()
    assert states(p) == (ConnState.TRYOPEN, ConnState.TRYOPEN)
    to_a, to_b = pending(p, p.b, p.a, "ConnOpenAck"), pending(p, p.a, p.b, "ConnOpenAck")
    assert p.a.submit(to_a[0] + [to_a[1]]).ok
    assert p.b.submit(to_b[0] + [to_b[1]]).ok
    p.blocks()
    assert states(p) == (ConnState.OPEN, ConnState.OPEN)


def test_try_over_conflicting_prior_state():
    p = Pair()
    init(p)
    updates, try_ = pending(p, p.a, p.b, "ConnOpenTry")
    # B already uses conn-0 for a different counterparty
    assert p.b.submit([ConnOpenInit("conn-0", "conn-7", "ibc", "client-a", "client-b")]).ok
    assert p.b.submit(updates).ok
    assert p.b.submit([try_]).reason == "ConflictingPriorState"


def test_man_in_the_middle_consensus_is_caught():
    """B's client is pointed at an impostor of A; A's ack check refuses."""
    a, b = Ledger("A"), Ledger("B")
    impostor = Ledger("A", seed=666)
    for l in (a, b, impostor):
        l.produce_block()
    assert a.submit([ClientCreate("client-b", b.client_state_for_counterparty(),
                                  b.own_consensus_state(1).encode())]).ok
    assert impostor.submit([ClientCreate("client-b", b.client_state_for_counterparty(),
                                         b.own_consensus_state(1).encode())]).ok
    assert b.submit([ClientCreate("client-a", impostor.client_state_for_counterparty(),
                                  impostor.own_consensus_state(1).encode())]).ok
    for l in (a, impostor):
        assert l.submit([ConnOpenInit("conn-0", "conn-0", "ibc", "client-b", "client-a")]).ok
    for l in (a, b, impostor):
        l.produce_block()
    mitm = Relayer("mitm", impostor, b)
    assert all(e.ok for e in mitm.relay_once().entries)
    b.produce_block()
    assert get_connection(b, "conn-0").state == ConnState.TRYOPEN
    honest = Relayer("honest", a, b)
    dgs = honest.pending_datagrams(b, a)
    ack = [d for d in dgs if d.kind.name == "ConnOpenAck"]
    assert ack
    updates = [d for d in dgs if d.kind.name == "ClientUpdate"]
    assert a.submit(updates).ok
    assert a.submit(ack).reason == "ProofFailure"
    assert get_connection(a, "conn-0").state == ConnState.INIT
