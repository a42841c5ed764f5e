"""Connection ends and the four-step opening handshake."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

from . import client as clients
from .client import ConsensusState
from .encoding import Encodable
from .errors import (
    BadState, ConflictingPriorState, FutureConsensusHeight, IdentifierInUse, IncompatibleVersion,
    NoSuchConnection, ProofFailure,
)
from .store import CommitmentProof

if TYPE_CHECKING:
    from .ledger import Ledger

COMPATIBLE_VERSIONS: tuple[str, ...] = ("ibc-1",)


class ConnState(enum.IntEnum):
    INIT = 1
    TRYOPEN = 2
    OPEN = 3


@dataclass(frozen=True)
class ConnectionEnd(Encodable):
    """``versions`` lists the proposals while INIT and holds the single agreed version after."""
    state: ConnState
    counterparty_connection_id: str
    counterparty_prefix: str
    client_id: str
    counterparty_client_id: str
    versions: tuple[str, ...]

    @property
    def version(self) -> str:
        return self.versions[0]


def connection_path(ident: str) -> str:
    return f"connections/{ident}"


def get_compatible_versions() -> tuple[str, ...]:
    return COMPATIBLE_VERSIONS


def pick_version(counterparty_versions: tuple[str, ...]) -> str:
    for v in get_compatible_versions():
        if v in counterparty_versions:
            return v
    raise IncompatibleVersion(f"no common version in {list(counterparty_versions)}")


def get_connection(host: "Ledger", ident: str) -> ConnectionEnd:
    raw = host.ibc_get(connection_path(ident))
    if raw is None:
        raise NoSuchConnection(ident)
    return ConnectionEnd.decode(raw)


def find_connection(host: "Ledger", ident: str) -> Optional[ConnectionEnd]:
    raw = host.ibc_get(connection_path(ident))
    return None if raw is None else ConnectionEnd.decode(raw)


def _put(host: "Ledger", ident: str, conn: ConnectionEnd) -> None:
    host.ibc_set(connection_path(ident), conn.encode())


# -- state verification through the connection's client ---------------------------

def verify_membership(host: "Ledger", conn: ConnectionEnd, height: int, path: str,
                      value: bytes, proof: CommitmentProof) -> bool:
    return clients.verify_membership(host, conn.client_id, height, conn.counterparty_prefix,
                                     path, value, proof)


def verify_non_membership(host: "Ledger", conn: ConnectionEnd, height: int, path: str,
                          proof: CommitmentProof) -> bool:
    return clients.verify_non_membership(host, conn.client_id, height, conn.counterparty_prefix,
                                         path, proof)


def verify_connection_state(host: "Ledger", conn: ConnectionEnd, height: int,
                            proof: CommitmentProof, ident: str, expected: ConnectionEnd) -> bool:
    return verify_membership(host, conn, height, connection_path(ident), expected.encode(), proof)


def verify_client_consensus_state(host: "Ledger", conn: ConnectionEnd, height: int,
                                  proof: CommitmentProof, client_id: str, consensus_height: int,
                                  expected: ConsensusState) -> bool:
    path = clients.consensus_path(client_id, consensus_height)
    return verify_membership(host, conn, height, path, expected.encode(), proof)


def _own_consensus(host: "Ledger", consensus_height: int) -> ConsensusState:
    if consensus_height > host.height:
        raise FutureConsensusHeight(f"{consensus_height} > {host.height}")
    return host.own_consensus_state(consensus_height)


# -- handshake -------------------------------------------------------------------

def conn_open_init(host: "Ledger", ident: str, desired_counterparty_id: str,
                   counterparty_prefix: str, client_id: str, counterparty_client_id: str) -> None:
    clients.validate_identifier(ident)
    clients.validate_identifier(desired_counterparty_id)
    if host.ibc_get(connection_path(ident)) is not None:
        raise IdentifierInUse(ident)
    clients.get_client_state(host, client_id)
    conn = ConnectionEnd(ConnState.INIT, desired_counterparty_id, counterparty_prefix,
                         client_id, counterparty_client_id, get_compatible_versions())
    _put(host, ident, conn)
    host.emit("ConnOpenInit", connection_id=ident, client_id=client_id,
              counterparty_connection_id=desired_counterparty_id)


def conn_open_try(host: "Ledger", desired_id: str, counterparty_connection_id: str,
                  counterparty_prefix: str, counterparty_client_id: str, client_id: str,
                  counterparty_versions: tuple[str, ...], proof_init: CommitmentProof,
                  proof_consensus: CommitmentProof, proof_height: int,
                  consensus_height: int) -> None:
    clients.validate_identifier(desired_id)
    expected_consensus = _own_consensus(host, consensus_height)
    expected = ConnectionEnd(ConnState.INIT, desired_id, host.prefix, counterparty_client_id,
                             client_id, tuple(counterparty_versions))
    version = pick_version(tuple(counterparty_versions))
    conn = ConnectionEnd(ConnState.TRYOPEN, counterparty_connection_id, counterparty_prefix,
                         client_id, counterparty_client_id, (version,))
    if not verify_connection_state(host, conn, proof_height, proof_init,
                                   counterparty_connection_id, expected):
        raise ProofFailure("counterparty INIT end not proven")
    if not verify_client_consensus_state(host, conn, proof_height, proof_consensus,
                                         counterparty_client_id, consensus_height,
                                         expected_consensus):
        raise ProofFailure("counterparty client does not hold our consensus state")
    previous = find_connection(host, desired_id)
    if previous is not None and not (
            previous.state == ConnState.INIT
            and previous.counterparty_connection_id == counterparty_connection_id
            and previous.counterparty_prefix == counterparty_prefix
            and previous.client_id == client_id
            and previous.counterparty_client_id == counterparty_client_id
            and version in previous.versions):
        raise ConflictingPriorState(f"connection {desired_id} already exists")
    _put(host, desired_id, conn)
    host.emit("ConnOpenTry", connection_id=desired_id, client_id=client_id,
              counterparty_connection_id=counterparty_connection_id, proof_height=proof_height)


def conn_open_ack(host: "Ledger", ident: str, version: str, proof_try: CommitmentProof,
                  proof_consensus: CommitmentProof, proof_height: int,
                  consensus_height: int) -> None:
    expected_consensus = _own_consensus(host, consensus_height)
    conn = get_connection(host, ident)
    if conn.state not in (ConnState.INIT, ConnState.TRYOPEN):
        raise BadState(f"connection {ident} is {conn.state.name}")
    expected = ConnectionEnd(ConnState.TRYOPEN, ident, host.prefix, conn.counterparty_client_id,
                             conn.client_id, (version,))
    if not verify_connection_state(host, conn, proof_height, proof_try,
                                   conn.counterparty_connection_id, expected):
        raise ProofFailure("counterparty TRYOPEN end not proven")
    if not verify_client_consensus_state(host, conn, proof_height, proof_consensus,
                                         conn.counterparty_client_id, consensus_height,
                                         expected_consensus):
        raise ProofFailure("counterparty client does not hold our consensus state")
    if version not in get_compatible_versions():
        raise IncompatibleVersion(version)
    if conn.state == ConnState.TRYOPEN and conn.version != version:
        raise IncompatibleVersion(f"{version} differs from negotiated {conn.version}")
    _put(host, ident, replace(conn, state=ConnState.OPEN, versions=(version,)))
    host.emit("ConnOpenAck", connection_id=ident, client_id=conn.client_id,
              proof_height=proof_height)


def conn_open_confirm(host: "Ledger", ident: str, proof_ack: CommitmentProof,
                      proof_height: int) -> None:
    conn = get_connection(host, ident)
    if conn.state != ConnState.TRYOPEN:
        raise BadState(f"connection {ident} is {conn.state.name}")
    expected = ConnectionEnd(ConnState.OPEN, ident, host.prefix, conn.counterparty_client_id,
                             conn.client_id, conn.versions)
    if not verify_connection_state(host, conn, proof_height, proof_ack,
                                   conn.counterparty_connection_id, expected):
        raise ProofFailure("counterparty OPEN end not proven")
    _put(host, ident, replace(conn, state=ConnState.OPEN))
    host.emit("ConnOpenConfirm", connection_id=ident, client_id=conn.client_id,
              proof_height=proof_height)
