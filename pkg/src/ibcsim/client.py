"""Light clients: loopback, single-key solo machine, and quorum-signature chains.

Client records live in the host's provable store under ``clients/{id}`` with
consensus states at ``clients/{id}/consensusStates/{height}``. Every function
here takes the host ledger as its first argument and raises an
:class:`~ibcsim.errors.IBCError` to abort the enclosing transaction.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import TYPE_CHECKING, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from .encoding import DecodeError, Encodable, Reader, lp, sha256, u8, u64
from .errors import (
    Expired, Frozen, IdentifierInUse, InvalidHeader, InvalidIdentifier, MalformedState,
    NoConsensusState, NoSuchClient, NotMisbehaviour, StaleHeader,
)
from .store import CommitmentProof, verify_membership as _verify_mem, verify_non_membership as _verify_non

if TYPE_CHECKING:
    from .ledger import Ledger

CONSENSUS_RETENTION = 256
DEFAULT_TRUSTING_BLOCKS = 100

_IDENT = re.compile(r"[a-z0-9-]{1,64}")


def validate_identifier(ident: str) -> None:
    if not isinstance(ident, str) or not _IDENT.fullmatch(ident):
        raise InvalidIdentifier(f"invalid identifier {ident!r}")


class ClientType(enum.IntEnum):
    LOOPBACK = 0
    SOLO = 1
    QUORUM = 2


def signer_set_digest(keys: tuple[bytes, ...]) -> bytes:
    return sha256(*(lp(k) for k in keys))


def quorum(k: int) -> int:
    return (2 * k) // 3 + 1


@dataclass(frozen=True)
class ConsensusState:
    """Trusted snapshot of a counterparty at one height.

    Canonical form: type byte, height, 32-byte root, timestamp, then signer
    material (signer-set digest, solo public key, or nothing for loopback).
    """
    client_type: ClientType
    height: int
    root: bytes
    timestamp: int
    material: bytes = b""

    def __post_init__(self):
        if len(self.root) != 32:
            raise ValueError("root must be 32 bytes")
        expected = {ClientType.LOOPBACK: 0, ClientType.SOLO: 32, ClientType.QUORUM: 32}[self.client_type]
        if len(self.material) != expected:
            raise ValueError("signer material has the wrong length")

    def encode(self) -> bytes:
        return (u8(self.client_type) + u64(self.height) + self.root
                + u64(self.timestamp) + self.material)

    @classmethod
    def decode(cls, data: bytes) -> "ConsensusState":
        r = Reader(data)
        try:
            ct = ClientType(r.u8())
        except ValueError as e:
            raise DecodeError(str(e)) from e
        height, root, ts = r.u64(), r.take(32), r.u64()
        material = r.take(len(r.data) - r.pos)
        try:
            return cls(ct, height, root, ts, material)
        except ValueError as e:
            raise DecodeError(str(e)) from e


@dataclass(frozen=True)
class ClientState(Encodable):
    client_type: ClientType
    chain_id: str
    latest_height: int
    frozen_height: int  # 0 = not frozen
    trusting_period: int
    signer_keys: tuple[bytes, ...]

    @property
    def frozen(self) -> bool:
        return self.frozen_height > 0


@dataclass(frozen=True)
class BlockHeader(Encodable):
    chain_id: str
    height: int
    timestamp: int
    app_root: bytes
    prev_digest: bytes
    signer_set_digest: bytes

    def digest(self) -> bytes:
        return sha256(self.encode())


@dataclass(frozen=True)
class Signature(Encodable):
    index: int
    signature: bytes


@dataclass(frozen=True)
class Header(Encodable):
    block: BlockHeader
    signatures: tuple[Signature, ...]

    @property
    def height(self) -> int:
        return self.block.height


@dataclass(frozen=True)
class Misbehaviour(Encodable):
    header_a: Header
    header_b: Header


@lru_cache(maxsize=1 << 16)
def _ed25519_ok(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


def count_valid_signatures(header: Header, keys: tuple[bytes, ...]) -> int:
    msg = header.block.digest()
    seen = set()
    for s in header.signatures:
        if s.index in seen or s.index >= len(keys):
            return -1
        seen.add(s.index)
        if not _ed25519_ok(keys[s.index], msg, s.signature):
            return -1
    return len(seen)


def header_valid(cs: ClientState, header: Header) -> bool:
    """Signature check of a header against a client's static signer set."""
    b = header.block
    if b.chain_id != cs.chain_id or len(b.app_root) != 32:
        return False
    if cs.client_type == ClientType.QUORUM:
        if b.signer_set_digest != signer_set_digest(cs.signer_keys):
            return False
        return count_valid_signatures(header, cs.signer_keys) >= quorum(len(cs.signer_keys))
    if cs.client_type == ClientType.SOLO:
        return (b.signer_set_digest == cs.signer_keys[0]
                and count_valid_signatures(header, cs.signer_keys) == 1)
    return False


def consensus_from_header(cs: ClientState, header: Header) -> ConsensusState:
    material = b"" if cs.client_type == ClientType.LOOPBACK else header.block.signer_set_digest
    return ConsensusState(cs.client_type, header.block.height, header.block.app_root,
                          header.block.timestamp, material)


# -- store access --------------------------------------------------------------

def client_path(client_id: str) -> str:
    return f"clients/{client_id}"


def consensus_path(client_id: str, height: int) -> str:
    return f"clients/{client_id}/consensusStates/{height}"


def get_client_state(host: "Ledger", client_id: str) -> ClientState:
    raw = host.ibc_get(client_path(client_id))
    if raw is None:
        raise NoSuchClient(client_id)
    return ClientState.decode(raw)


def get_consensus_state(host: "Ledger", client_id: str, height: int) -> ConsensusState:
    raw = host.ibc_get(consensus_path(client_id, height))
    if raw is None:
        raise NoConsensusState(f"{client_id} has no consensus state at {height}")
    return ConsensusState.decode(raw)


def consensus_heights(host: "Ledger", client_id: str) -> list[int]:
    prefix = consensus_path(client_id, 0)[:-1]
    return sorted(int(k[len(host.prefix) + 1 + len(prefix):])
                  for k, _ in host.ibc_items(prefix))


def _store(host: "Ledger", client_id: str, cs: ClientState) -> None:
    host.ibc_set(client_path(client_id), cs.encode())


def _store_consensus(host: "Ledger", client_id: str, cons: ConsensusState) -> None:
    host.ibc_set(consensus_path(client_id, cons.height), cons.encode())
    for h in consensus_heights(host, client_id):
        if h + CONSENSUS_RETENTION <= cons.height:
            host.ibc_delete(consensus_path(client_id, h))
        else:
            break


# -- lifecycle -------------------------------------------------------------------

def create_client(host: "Ledger", client_id: str, state: ClientState,
                  consensus: ConsensusState) -> ClientState:
    validate_identifier(client_id)
    if host.ibc_get(client_path(client_id)) is not None:
        raise IdentifierInUse(client_id)
    if state.client_type != consensus.client_type or state.frozen:
        raise MalformedState("client and consensus state disagree")
    if state.latest_height != consensus.height:
        raise MalformedState("latest height must match the initial consensus state")
    if state.client_type == ClientType.QUORUM:
        if not state.signer_keys or consensus.material != signer_set_digest(state.signer_keys):
            raise MalformedState("signer set does not match consensus state")
    elif state.client_type == ClientType.SOLO:
        if len(state.signer_keys) != 1 or consensus.material != state.signer_keys[0]:
            raise MalformedState("solo client needs exactly its public key")
    elif state.signer_keys or state.chain_id != host.id:
        raise MalformedState("loopback client must track the host itself")
    if any(len(k) != 32 for k in state.signer_keys) or state.trusting_period <= 0:
        raise MalformedState("bad key length or trusting period")
    _store(host, client_id, state)
    if state.client_type != ClientType.LOOPBACK:
        _store_consensus(host, client_id, consensus)
    host.emit("CreateClient", client_id=client_id, chain_id=state.chain_id,
              height=consensus.height)
    return state


def update_client(host: "Ledger", client_id: str, header: Header) -> None:
    cs = get_client_state(host, client_id)
    if cs.frozen:
        raise Frozen(client_id)
    if cs.client_type == ClientType.LOOPBACK:
        raise InvalidHeader("loopback clients take no headers")
    if header.block.height <= cs.latest_height:
        raise StaleHeader(f"height {header.block.height} <= {cs.latest_height}")
    latest = get_consensus_state(host, client_id, cs.latest_height)
    if host.current_timestamp - latest.timestamp >= cs.trusting_period:
        raise Expired(f"{client_id} not updated within its trusting period")
    if header.block.timestamp < latest.timestamp:
        raise InvalidHeader("timestamp went backwards")
    if not header_valid(cs, header):
        raise InvalidHeader("signature check failed")
    _store(host, client_id, replace(cs, latest_height=header.block.height))
    _store_consensus(host, client_id, consensus_from_header(cs, header))
    host.emit("UpdateClient", client_id=client_id, height=header.block.height)


def submit_misbehaviour(host: "Ledger", client_id: str, evidence: Misbehaviour) -> None:
    cs = get_client_state(host, client_id)
    if cs.frozen:
        raise Frozen(client_id)
    a, b = evidence.header_a, evidence.header_b
    if a.block.height != b.block.height or a.block.digest() == b.block.digest():
        raise NotMisbehaviour("headers must share a height and differ")
    if not (header_valid(cs, a) and header_valid(cs, b)):
        raise NotMisbehaviour("evidence headers must each be valid")
    _store(host, client_id, replace(cs, frozen_height=max(a.block.height, 1)))
    host.emit("ClientMisbehaviour", client_id=client_id, height=a.block.height)


def reset_client(host: "Ledger", client_id: str, consensus: ConsensusState) -> None:
    """Out-of-protocol recovery: unfreeze and re-anchor a client. Harness use only."""
    cs = get_client_state(host, client_id)
    _store(host, client_id, replace(cs, frozen_height=0, latest_height=consensus.height))
    _store_consensus(host, client_id, consensus)


# -- state verification ----------------------------------------------------------

def _root_for(host: "Ledger", client_id: str, height: int) -> tuple[ClientState, Optional[bytes]]:
    cs = get_client_state(host, client_id)
    if cs.frozen and height >= cs.frozen_height:
        raise Frozen(f"{client_id} frozen at {cs.frozen_height}")
    if cs.client_type == ClientType.LOOPBACK:
        return cs, None
    return cs, get_consensus_state(host, client_id, height).root


def verify_membership(host: "Ledger", client_id: str, height: int, prefix: str, path: str,
                      value: bytes, proof: Optional[CommitmentProof]) -> bool:
    _cs, root = _root_for(host, client_id, height)
    key = f"{prefix}/{path}"
    if root is None:
        return host.store.get_at(height, key) == value if height <= host.height else False
    return _verify_mem(root, key, value, proof)


def verify_non_membership(host: "Ledger", client_id: str, height: int, prefix: str, path: str,
                          proof: Optional[CommitmentProof]) -> bool:
    _cs, root = _root_for(host, client_id, height)
    key = f"{prefix}/{path}"
    if root is None:
        return height <= host.height and host.store.get_at(height, key) is None
    return _verify_non(root, key, proof)


def consensus_timestamp(host: "Ledger", client_id: str, height: int) -> int:
    cs = get_client_state(host, client_id)
    if cs.client_type == ClientType.LOOPBACK:
        return host.block_header(height).timestamp
    return get_consensus_state(host, client_id, height).timestamp
