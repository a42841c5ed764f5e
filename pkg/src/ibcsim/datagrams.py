"""Datagrams relayers submit to a ledger, and their tagged wire format.

Wire form is one tag byte followed by the canonical field encoding.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .channel import Order, Packet
from .client import ClientState, Header, Misbehaviour
from .encoding import DecodeError, Encodable, Reader, u8
from .errors import MalformedDatagram
from .store import CommitmentProof


class DatagramKind(enum.IntEnum):
    ClientUpdate = 0
    ConnOpenInit = 1
    ConnOpenTry = 2
    ConnOpenAck = 3
    ConnOpenConfirm = 4
    ChanOpenInit = 5
    ChanOpenTry = 6
    ChanOpenAck = 7
    ChanOpenConfirm = 8
    ChanCloseInit = 9
    ChanCloseConfirm = 10
    PacketRecv = 11
    PacketAck = 12
    PacketTimeout = 13
    PacketTimeoutOnClose = 14
    PacketCleanup = 15
    ClientCreate = 16
    ClientMisbehaviour = 17


class Datagram(Encodable):
    kind: DatagramKind

    def to_bytes(self) -> bytes:
        return u8(self.kind) + self.encode()


@dataclass(frozen=True)
class ClientUpdate(Datagram):
    kind = DatagramKind.ClientUpdate
    client_id: str
    header: Header


@dataclass(frozen=True)
class ClientCreate(Datagram):
    kind = DatagramKind.ClientCreate
    client_id: str
    client_state: ClientState
    consensus_state: bytes


@dataclass(frozen=True)
class ClientMisbehaviour(Datagram):
    kind = DatagramKind.ClientMisbehaviour
    client_id: str
    evidence: Misbehaviour


@dataclass(frozen=True)
class ConnOpenInit(Datagram):
    kind = DatagramKind.ConnOpenInit
    connection_id: str
    desired_counterparty_id: str
    counterparty_prefix: str
    client_id: str
    counterparty_client_id: str


@dataclass(frozen=True)
class ConnOpenTry(Datagram):
    kind = DatagramKind.ConnOpenTry
    desired_id: str
    counterparty_connection_id: str
    counterparty_prefix: str
    counterparty_client_id: str
    client_id: str
    counterparty_versions: tuple[str, ...]
    proof_init: CommitmentProof
    proof_consensus: CommitmentProof
    proof_height: int
    consensus_height: int


@dataclass(frozen=True)
class ConnOpenAck(Datagram):
    kind = DatagramKind.ConnOpenAck
    connection_id: str
    version: str
    proof_try: CommitmentProof
    proof_consensus: CommitmentProof
    proof_height: int
    consensus_height: int


@dataclass(frozen=True)
class ConnOpenConfirm(Datagram):
    kind = DatagramKind.ConnOpenConfirm
    connection_id: str
    proof_ack: CommitmentProof
    proof_height: int


@dataclass(frozen=True)
class ChanOpenInit(Datagram):
    kind = DatagramKind.ChanOpenInit
    order: Order
    connection_hops: tuple[str, ...]
    port: str
    channel: str
    counterparty_port: str
    counterparty_channel: str
    version: str


@dataclass(frozen=True)
class ChanOpenTry(Datagram):
    kind = DatagramKind.ChanOpenTry
    order: Order
    connection_hops: tuple[str, ...]
    port: str
    channel: str
    counterparty_port: str
    counterparty_channel: str
    counterparty_version: str
    proof_init: CommitmentProof
    proof_height: int


@dataclass(frozen=True)
class ChanOpenAck(Datagram):
    kind = DatagramKind.ChanOpenAck
    port: str
    channel: str
    counterparty_version: str
    proof_try: CommitmentProof
    proof_height: int


@dataclass(frozen=True)
class ChanOpenConfirm(Datagram):
    kind = DatagramKind.ChanOpenConfirm
    port: str
    channel: str
    proof_ack: CommitmentProof
    proof_height: int


@dataclass(frozen=True)
class ChanCloseInit(Datagram):
    kind = DatagramKind.ChanCloseInit
    port: str
    channel: str


@dataclass(frozen=True)
class ChanCloseConfirm(Datagram):
    kind = DatagramKind.ChanCloseConfirm
    port: str
    channel: str
    proof_init: CommitmentProof
    proof_height: int


@dataclass(frozen=True)
class PacketRecv(Datagram):
    kind = DatagramKind.PacketRecv
    packet: Packet
    proof: CommitmentProof
    proof_height: int


@dataclass(frozen=True)
class PacketAck(Datagram):
    kind = DatagramKind.PacketAck
    packet: Packet
    acknowledgement: bytes
    proof: CommitmentProof
    proof_height: int


@dataclass(frozen=True)
class PacketTimeout(Datagram):
    kind = DatagramKind.PacketTimeout
    packet: Packet
    proof: CommitmentProof
    proof_height: int
    next_sequence_recv: Optional[int]


@dataclass(frozen=True)
class PacketTimeoutOnClose(Datagram):
    kind = DatagramKind.PacketTimeoutOnClose
    packet: Packet
    proof_unreceived: CommitmentProof
    proof_closed: CommitmentProof
    proof_height: int
    next_sequence_recv: Optional[int]


@dataclass(frozen=True)
class PacketCleanup(Datagram):
    kind = DatagramKind.PacketCleanup
    packet: Packet
    proof: CommitmentProof
    proof_height: int
    next_sequence_recv: Optional[int]
    acknowledgement: Optional[bytes]


DATAGRAM_TYPES: dict[DatagramKind, type[Datagram]] = {
    cls.kind: cls for cls in (
        ClientUpdate, ConnOpenInit, ConnOpenTry, ConnOpenAck, ConnOpenConfirm, ChanOpenInit,
        ChanOpenTry, ChanOpenAck, ChanOpenConfirm, ChanCloseInit, ChanCloseConfirm, PacketRecv,
        PacketAck, PacketTimeout, PacketTimeoutOnClose, PacketCleanup, ClientCreate,
        ClientMisbehaviour,
    )
}

PACKET_KINDS = frozenset({DatagramKind.PacketRecv, DatagramKind.PacketAck,
                          DatagramKind.PacketTimeout, DatagramKind.PacketTimeoutOnClose,
                          DatagramKind.PacketCleanup})


def encode_datagram(dg: Datagram) -> bytes:
    return dg.to_bytes()


def decode_datagram(data: bytes) -> Datagram:
    try:
        r = Reader(data)
        cls = DATAGRAM_TYPES[DatagramKind(r.u8())]
        dg = cls.read(r)
        r.done()
        return dg
    except (DecodeError, ValueError, KeyError) as e:
        raise MalformedDatagram(str(e)) from e
