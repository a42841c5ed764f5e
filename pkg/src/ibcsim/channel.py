"""Channel ends, open/close handshakes, and the packet lifecycle."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

from . import client as clients
from . import connection as conns
from .connection import ConnState, ConnectionEnd
from .encoding import Encodable, lp, sha256, u64
from .errors import (
    AlreadyClosed, ChannelClosed, ChannelNotClosed, ChannelNotOpen, CommitmentMismatch,
    ConflictingPriorState, ConnectionNotOpen, Frozen, DuplicateReceipt, IdentifierInUse,
    MultiHopUnsupported, NoCommitment, NoSuchChannel, NoSuchConnection, NotYetProcessed,
    NotYetTimedOut, OutOfOrder, PacketWasReceived, ProofFailure, TimedOut,
    TimeoutElapsedOnClient, Unauthorized, WrongAckSequence, WrongCounterparty, WrongSequence,
)
from .store import CommitmentProof

if TYPE_CHECKING:
    from .ledger import Ledger


class ChanState(enum.IntEnum):
    INIT = 1
    TRYOPEN = 2
    OPEN = 3
    CLOSED = 4


class Order(enum.IntEnum):
    ORDERED = 0
    UNORDERED = 1


@dataclass(frozen=True)
class ChannelEnd(Encodable):
    state: ChanState
    ordering: Order
    counterparty_port: str
    counterparty_channel: str
    connection_hops: tuple[str, ...]
    version: str


@dataclass(frozen=True)
class Packet(Encodable):
    sequence: int
    timeout_height: int
    timeout_timestamp: int
    source_port: str
    source_channel: str
    dest_port: str
    dest_channel: str
    data: bytes

    def commitment(self) -> bytes:
        return packet_commitment(self.data, self.timeout_height, self.timeout_timestamp)

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.source_port, self.source_channel, self.sequence)


def packet_commitment(data: bytes, timeout_height: int, timeout_timestamp: int) -> bytes:
    return sha256(lp(data), u64(timeout_height), u64(timeout_timestamp))


def ack_commitment(ack: bytes) -> bytes:
    return sha256(ack)


# -- paths -----------------------------------------------------------------------

def channel_path(port: str, chan: str) -> str:
    return f"channelEnds/ports/{port}/channels/{chan}"


def next_send_path(port: str, chan: str) -> str:
    return f"nextSequenceSend/ports/{port}/channels/{chan}"


def next_recv_path(port: str, chan: str) -> str:
    return f"nextSequenceRecv/ports/{port}/channels/{chan}"


def next_ack_path(port: str, chan: str) -> str:
    return f"nextSequenceAck/ports/{port}/channels/{chan}"


def commitment_path(port: str, chan: str, seq: int) -> str:
    return f"commitments/ports/{port}/channels/{chan}/sequences/{seq}"


def ack_path(port: str, chan: str, seq: int) -> str:
    return f"acks/ports/{port}/channels/{chan}/sequences/{seq}"


def _cap_key(port: str, chan: str) -> tuple:
    return ("chancap", port, chan)


# -- helpers ---------------------------------------------------------------------

def get_channel(host: "Ledger", port: str, chan: str) -> ChannelEnd:
    raw = host.ibc_get(channel_path(port, chan))
    if raw is None:
        raise NoSuchChannel(f"{port}/{chan}")
    return ChannelEnd.decode(raw)


def find_channel(host: "Ledger", port: str, chan: str) -> Optional[ChannelEnd]:
    raw = host.ibc_get(channel_path(port, chan))
    return None if raw is None else ChannelEnd.decode(raw)


def _put(host: "Ledger", port: str, chan: str, end: ChannelEnd) -> None:
    host.ibc_set(channel_path(port, chan), end.encode())


def get_sequence(host: "Ledger", path: str) -> int:
    raw = host.ibc_get(path)
    return int.from_bytes(raw, "big") if raw is not None else 0


def _set_sequence(host: "Ledger", path: str, n: int) -> None:
    host.ibc_set(path, u64(n))


def _authenticate(host: "Ledger", port: str, chan: str, capability: bytes) -> None:
    stored = host.private.get(_cap_key(port, chan))
    if stored is None or stored != capability:
        raise Unauthorized(f"capability does not own channel {port}/{chan}")


def _connection(host: "Ledger", end: ChannelEnd, need_open: bool = True) -> ConnectionEnd:
    conn = conns.get_connection(host, end.connection_hops[0])
    if need_open and conn.state != ConnState.OPEN:
        raise ConnectionNotOpen(end.connection_hops[0])
    return conn


def _validate(port: str, chan: str, hops) -> None:
    clients.validate_identifier(port)
    clients.validate_identifier(chan)
    if len(hops) != 1:
        raise MultiHopUnsupported(f"{len(hops)} connection hops")


def _init_sequences(host: "Ledger", port: str, chan: str) -> None:
    for path in (next_send_path, next_recv_path, next_ack_path):
        _set_sequence(host, path(port, chan), 1)


def verify_channel_state(host: "Ledger", conn: ConnectionEnd, height: int,
                         proof: CommitmentProof, port: str, chan: str,
                         expected: ChannelEnd) -> bool:
    return conns.verify_membership(host, conn, height, channel_path(port, chan),
                                   expected.encode(), proof)


def _client_info(conn: ConnectionEnd, height: int) -> dict:
    return {"client_id": conn.client_id, "proof_height": height}


# -- handshake -------------------------------------------------------------------

def chan_open_init(host: "Ledger", order: Order, hops: tuple[str, ...], port: str, chan: str,
                   counterparty_port: str, counterparty_channel: str, version: str,
                   port_capability: bytes) -> bytes:
    _validate(port, chan, hops)
    if host.ibc_get(channel_path(port, chan)) is not None:
        raise IdentifierInUse(f"{port}/{chan}")
    if conns.find_connection(host, hops[0]) is None:
        raise NoSuchConnection(hops[0])
    host.authenticate_port(port, port_capability)
    end = ChannelEnd(ChanState.INIT, Order(order), counterparty_port, counterparty_channel,
                     tuple(hops), version)
    _put(host, port, chan, end)
    cap = host.new_capability()
    host.private.set(_cap_key(port, chan), cap)
    _init_sequences(host, port, chan)
    host.emit("ChanOpenInit", port=port, channel=chan, connection_id=hops[0])
    return cap


def chan_open_try(host: "Ledger", order: Order, hops: tuple[str, ...], port: str, chan: str,
                  counterparty_port: str, counterparty_channel: str, version: str,
                  counterparty_version: str, proof_init: CommitmentProof, proof_height: int,
                  port_capability: bytes) -> bytes:
    _validate(port, chan, hops)
    previous = find_channel(host, port, chan)
    if previous is not None and not (
            previous.state == ChanState.INIT
            and previous.ordering == order
            and previous.counterparty_port == counterparty_port
            and previous.counterparty_channel == counterparty_channel
            and previous.connection_hops == tuple(hops)
            and previous.version == version):
        raise ConflictingPriorState(f"channel {port}/{chan} already exists")
    host.authenticate_port(port, port_capability)
    conn = conns.find_connection(host, hops[0])
    if conn is None:
        raise NoSuchConnection(hops[0])
    if conn.state != ConnState.OPEN:
        raise ConnectionNotOpen(hops[0])
    expected = ChannelEnd(ChanState.INIT, Order(order), port, chan,
                          (conn.counterparty_connection_id,), counterparty_version)
    if not verify_channel_state(host, conn, proof_height, proof_init, counterparty_port,
                                counterparty_channel, expected):
        raise ProofFailure("counterparty INIT channel not proven")
    end = ChannelEnd(ChanState.TRYOPEN, Order(order), counterparty_port, counterparty_channel,
                     tuple(hops), version)
    _put(host, port, chan, end)
    cap = host.private.get(_cap_key(port, chan)) if previous is not None else None
    if cap is None:
        cap = host.new_capability()
        host.private.set(_cap_key(port, chan), cap)
    _init_sequences(host, port, chan)
    host.emit("ChanOpenTry", port=port, channel=chan, **_client_info(conn, proof_height))
    return cap


def chan_open_ack(host: "Ledger", port: str, chan: str, counterparty_version: str,
                  proof_try: CommitmentProof, proof_height: int, capability: bytes) -> None:
    end = get_channel(host, port, chan)
    if end.state not in (ChanState.INIT, ChanState.TRYOPEN):
        raise ConflictingPriorState(f"channel {port}/{chan} is {end.state.name}")
    _authenticate(host, port, chan, capability)
    conn = _connection(host, end)
    expected = ChannelEnd(ChanState.TRYOPEN, end.ordering, port, chan,
                          (conn.counterparty_connection_id,), counterparty_version)
    if not verify_channel_state(host, conn, proof_height, proof_try, end.counterparty_port,
                                end.counterparty_channel, expected):
        raise ProofFailure("counterparty TRYOPEN channel not proven")
    _put(host, port, chan, replace(end, state=ChanState.OPEN, version=counterparty_version))
    host.emit("ChanOpenAck", port=port, channel=chan, **_client_info(conn, proof_height))


def chan_open_confirm(host: "Ledger", port: str, chan: str, proof_ack: CommitmentProof,
                      proof_height: int, capability: bytes) -> None:
    end = get_channel(host, port, chan)
    if end.state != ChanState.TRYOPEN:
        raise ConflictingPriorState(f"channel {port}/{chan} is {end.state.name}")
    _authenticate(host, port, chan, capability)
    conn = _connection(host, end)
    expected = ChannelEnd(ChanState.OPEN, end.ordering, port, chan,
                          (conn.counterparty_connection_id,), end.version)
    if not verify_channel_state(host, conn, proof_height, proof_ack, end.counterparty_port,
                                end.counterparty_channel, expected):
        raise ProofFailure("counterparty OPEN channel not proven")
    _put(host, port, chan, replace(end, state=ChanState.OPEN))
    host.emit("ChanOpenConfirm", port=port, channel=chan, **_client_info(conn, proof_height))


def chan_close_init(host: "Ledger", port: str, chan: str, capability: bytes) -> None:
    _authenticate(host, port, chan, capability)
    end = get_channel(host, port, chan)
    if end.state == ChanState.CLOSED:
        raise AlreadyClosed(f"{port}/{chan}")
    _connection(host, end)
    _put(host, port, chan, replace(end, state=ChanState.CLOSED))
    host.emit("ChanCloseInit", port=port, channel=chan)


def chan_close_confirm(host: "Ledger", port: str, chan: str, proof_init: CommitmentProof,
                       proof_height: int, capability: bytes) -> None:
    _authenticate(host, port, chan, capability)
    end = get_channel(host, port, chan)
    if end.state == ChanState.CLOSED:
        raise AlreadyClosed(f"{port}/{chan}")
    conn = _connection(host, end)
    expected = ChannelEnd(ChanState.CLOSED, end.ordering, port, chan,
                          (conn.counterparty_connection_id,), end.version)
    if not verify_channel_state(host, conn, proof_height, proof_init, end.counterparty_port,
                                end.counterparty_channel, expected):
        raise ProofFailure("counterparty CLOSED channel not proven")
    _put(host, port, chan, replace(end, state=ChanState.CLOSED))
    host.emit("ChanCloseConfirm", port=port, channel=chan, **_client_info(conn, proof_height))


# -- packets ---------------------------------------------------------------------

def send_packet(host: "Ledger", packet: Packet, capability: bytes) -> None:
    end = get_channel(host, packet.source_port, packet.source_channel)
    if end.state == ChanState.CLOSED:
        raise ChannelClosed(f"{packet.source_port}/{packet.source_channel}")
    _authenticate(host, packet.source_port, packet.source_channel, capability)
    if (packet.dest_port, packet.dest_channel) != (end.counterparty_port, end.counterparty_channel):
        raise WrongCounterparty("packet destination does not match channel counterparty")
    conn = _connection(host, end, need_open=False)
    cs = clients.get_client_state(host, conn.client_id)
    if cs.frozen:
        raise Frozen(conn.client_id)
    if packet.timeout_height and cs.latest_height >= packet.timeout_height:
        raise TimeoutElapsedOnClient(
            f"client already at {cs.latest_height} >= {packet.timeout_height}")
    next_send = get_sequence(host, next_send_path(packet.source_port, packet.source_channel))
    if packet.sequence != next_send:
        raise WrongSequence(f"expected {next_send}, got {packet.sequence}")
    _set_sequence(host, next_send_path(packet.source_port, packet.source_channel), next_send + 1)
    host.ibc_set(commitment_path(packet.source_port, packet.source_channel, packet.sequence),
                 packet.commitment())
    host.emit("SendPacket", packet=packet, ordering=end.ordering.name,
              connection_id=end.connection_hops[0])


def recv_packet(host: "Ledger", packet: Packet, proof: CommitmentProof, proof_height: int,
                acknowledgement: bytes, capability: bytes) -> None:
    end = get_channel(host, packet.dest_port, packet.dest_channel)
    if end.state != ChanState.OPEN:
        raise ChannelNotOpen(f"{packet.dest_port}/{packet.dest_channel}")
    _authenticate(host, packet.dest_port, packet.dest_channel, capability)
    if (packet.source_port, packet.source_channel) != (end.counterparty_port, end.counterparty_channel):
        raise WrongCounterparty("packet source does not match channel counterparty")
    if host.ibc_get(ack_path(packet.dest_port, packet.dest_channel, packet.sequence)) is not None:
        raise DuplicateReceipt(f"sequence {packet.sequence} already acknowledged")
    conn = _connection(host, end)
    if packet.timeout_height and host.executing_height >= packet.timeout_height:
        raise TimedOut(f"height {host.executing_height} >= {packet.timeout_height}")
    if packet.timeout_timestamp and host.current_timestamp >= packet.timeout_timestamp:
        raise TimedOut(f"time {host.current_timestamp} >= {packet.timeout_timestamp}")
    path = commitment_path(packet.source_port, packet.source_channel, packet.sequence)
    if not conns.verify_membership(host, conn, proof_height, path, packet.commitment(), proof):
        raise ProofFailure("packet commitment not proven")
    write_ack = bool(acknowledgement) or end.ordering == Order.UNORDERED
    if write_ack:
        host.ibc_set(ack_path(packet.dest_port, packet.dest_channel, packet.sequence),
                     ack_commitment(acknowledgement))
    if end.ordering == Order.ORDERED:
        rpath = next_recv_path(packet.dest_port, packet.dest_channel)
        next_recv = get_sequence(host, rpath)
        if packet.sequence != next_recv:
            raise OutOfOrder(f"expected {next_recv}, got {packet.sequence}")
        _set_sequence(host, rpath, next_recv + 1)
    host.emit("RecvPacket", packet=packet, ordering=end.ordering.name,
              **_client_info(conn, proof_height))
    if write_ack:
        host.emit("WriteAck", packet=packet, ack=acknowledgement)


def _check_commitment(host: "Ledger", packet: Packet) -> None:
    stored = host.ibc_get(commitment_path(packet.source_port, packet.source_channel, packet.sequence))
    if stored is None:
        raise NoCommitment(f"no commitment for sequence {packet.sequence}")
    if stored != packet.commitment():
        raise CommitmentMismatch(f"commitment differs for sequence {packet.sequence}")


def _source_end(host: "Ledger", packet: Packet, capability: bytes, need_open: bool) -> ChannelEnd:
    end = get_channel(host, packet.source_port, packet.source_channel)
    if need_open and end.state != ChanState.OPEN:
        raise ChannelNotOpen(f"{packet.source_port}/{packet.source_channel}")
    _authenticate(host, packet.source_port, packet.source_channel, capability)
    if (packet.dest_port, packet.dest_channel) != (end.counterparty_port, end.counterparty_channel):
        raise WrongCounterparty("packet destination does not match channel counterparty")
    return end


def _delete_commitment(host: "Ledger", packet: Packet) -> None:
    host.ibc_delete(commitment_path(packet.source_port, packet.source_channel, packet.sequence))


def acknowledge_packet(host: "Ledger", packet: Packet, acknowledgement: bytes,
                       proof: CommitmentProof, proof_height: int, capability: bytes) -> None:
    end = _source_end(host, packet, capability, need_open=True)
    conn = _connection(host, end)
    _check_commitment(host, packet)
    path = ack_path(packet.dest_port, packet.dest_channel, packet.sequence)
    if not conns.verify_membership(host, conn, proof_height, path,
                                   ack_commitment(acknowledgement), proof):
        raise ProofFailure("acknowledgement not proven")
    if end.ordering == Order.ORDERED:
        apath = next_ack_path(packet.source_port, packet.source_channel)
        next_ack = get_sequence(host, apath)
        if packet.sequence != next_ack:
            raise WrongAckSequence(f"expected {next_ack}, got {packet.sequence}")
        _set_sequence(host, apath, next_ack + 1)
    _delete_commitment(host, packet)
    host.emit("AcknowledgePacket", packet=packet, ack=acknowledgement,
              **_client_info(conn, proof_height))


def _prove_unreceived(host: "Ledger", conn: ConnectionEnd, end: ChannelEnd, packet: Packet,
                      proof: CommitmentProof, proof_height: int,
                      next_sequence_recv: Optional[int]) -> None:
    if end.ordering == Order.ORDERED:
        if next_sequence_recv is None:
            raise ProofFailure("ordered timeout needs the destination receive sequence")
        if next_sequence_recv > packet.sequence:
            raise PacketWasReceived(f"destination already at {next_sequence_recv}")
        path = next_recv_path(packet.dest_port, packet.dest_channel)
        if not conns.verify_membership(host, conn, proof_height, path, u64(next_sequence_recv), proof):
            raise ProofFailure("destination receive sequence not proven")
    else:
        path = ack_path(packet.dest_port, packet.dest_channel, packet.sequence)
        if not conns.verify_non_membership(host, conn, proof_height, path, proof):
            raise ProofFailure("acknowledgement absence not proven")


def timeout_packet(host: "Ledger", packet: Packet, proof: CommitmentProof, proof_height: int,
                   next_sequence_recv: Optional[int], capability: bytes) -> None:
    end = _source_end(host, packet, capability, need_open=True)
    conn = _connection(host, end, need_open=False)
    height_passed = packet.timeout_height and proof_height >= packet.timeout_height
    time_passed = (packet.timeout_timestamp and clients.consensus_timestamp(
        host, conn.client_id, proof_height) > packet.timeout_timestamp)
    if not (height_passed or time_passed):
        raise NotYetTimedOut(f"sequence {packet.sequence} has not timed out at {proof_height}")
    _check_commitment(host, packet)
    _prove_unreceived(host, conn, end, packet, proof, proof_height, next_sequence_recv)
    _delete_commitment(host, packet)
    if end.ordering == Order.ORDERED:
        _put(host, packet.source_port, packet.source_channel, replace(end, state=ChanState.CLOSED))
        host.emit("ChanClosedByTimeout", port=packet.source_port, channel=packet.source_channel)
    host.emit("TimeoutPacket", packet=packet, on_close=False, **_client_info(conn, proof_height))


def timeout_on_close(host: "Ledger", packet: Packet, proof_unreceived: CommitmentProof,
                     proof_closed: CommitmentProof, proof_height: int,
                     next_sequence_recv: Optional[int], capability: bytes) -> None:
    end = _source_end(host, packet, capability, need_open=False)
    conn = _connection(host, end, need_open=False)
    _check_commitment(host, packet)
    expected = ChannelEnd(ChanState.CLOSED, end.ordering, packet.source_port,
                          packet.source_channel, (conn.counterparty_connection_id,), end.version)
    if not verify_channel_state(host, conn, proof_height, proof_closed, packet.dest_port,
                                packet.dest_channel, expected):
        raise ChannelNotClosed("counterparty channel not proven CLOSED")
    _prove_unreceived(host, conn, end, packet, proof_unreceived, proof_height, next_sequence_recv)
    _delete_commitment(host, packet)
    host.emit("TimeoutPacket", packet=packet, on_close=True, **_client_info(conn, proof_height))


def cleanup_packet(host: "Ledger", packet: Packet, proof: CommitmentProof, proof_height: int,
                   next_recv_or_ack: int | bytes, capability: bytes) -> None:
    end = _source_end(host, packet, capability, need_open=True)
    conn = _connection(host, end, need_open=False)
    _check_commitment(host, packet)
    if end.ordering == Order.ORDERED:
        if not isinstance(next_recv_or_ack, int):
            raise ProofFailure("ordered cleanup needs the destination receive sequence")
        if next_recv_or_ack <= packet.sequence:
            raise NotYetProcessed(f"destination still at {next_recv_or_ack}")
        path = next_recv_path(packet.dest_port, packet.dest_channel)
        if not conns.verify_membership(host, conn, proof_height, path, u64(next_recv_or_ack), proof):
            raise ProofFailure("destination receive sequence not proven")
    else:
        if not isinstance(next_recv_or_ack, (bytes, bytearray)):
            raise ProofFailure("unordered cleanup needs the written acknowledgement")
        path = ack_path(packet.dest_port, packet.dest_channel, packet.sequence)
        if not conns.verify_membership(host, conn, proof_height, path,
                                       ack_commitment(bytes(next_recv_or_ack)), proof):
            raise ProofFailure("acknowledgement not proven")
    _delete_commitment(host, packet)
    host.emit("CleanupPacket", packet=packet, **_client_info(conn, proof_height))
