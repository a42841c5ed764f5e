"""Simulated host ledger.

A ledger owns a provable store for IBC state (every key lives under its
commitment prefix), a private store for module state, a port/capability
registry, an event log, and a chain of quorum-signed blocks. Transactions are
atomic: any :class:`IBCError` raised while applying one reverts both stores and
drops its events.
"""

from __future__ import annotations

import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Iterator, Optional

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from . import client as clients
from .client import BlockHeader, ClientState, ClientType, ConsensusState, Header, Signature
from .encoding import DecodeError, lp_str, sha256, u64
from .errors import (
    HeightPruned, IBCError, LedgerHalted, PortAlreadyBound, PortNotBound, TxAborted, Unauthorized,
)
from .routing import Router
from .store import EMPTY_ROOT, ProvableStore

COMMITMENT_PREFIX = "ibc"
_LEDGER_ID = re.compile(r"[A-Za-z0-9-]{1,64}")


@lru_cache(maxsize=None)
def _signing_key(secret: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret)


@lru_cache(maxsize=None)
def _public_key(secret: bytes) -> bytes:
    return _signing_key(secret).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def _sign(secret: bytes, message: bytes) -> bytes:
    return _signing_key(secret).sign(message)


_MISSING = object()


class PrivateStore:
    """Journaled dictionary for state that is never proven to other ledgers."""

    def __init__(self):
        self._data: dict[Any, Any] = {}
        self._journals: list[dict[Any, Any]] = []

    def get(self, key, default=None):
        return self._data.get(key, default)

    def __contains__(self, key) -> bool:
        return key in self._data

    def set(self, key, value) -> None:
        if self._journals and key not in self._journals[-1]:
            self._journals[-1][key] = self._data.get(key, _MISSING)
        self._data[key] = value

    def delete(self, key) -> None:
        if key in self._data:
            if self._journals and key not in self._journals[-1]:
                self._journals[-1][key] = self._data[key]
            del self._data[key]

    def items(self):
        return self._data.items()

    def begin(self) -> None:
        self._journals.append({})

    def rollback(self) -> None:
        for key, old in self._journals.pop().items():
            if old is _MISSING:
                self._data.pop(key, None)
            else:
                self._data[key] = old

    def release(self) -> None:
        journal = self._journals.pop()
        if self._journals:
            for key, old in journal.items():
                self._journals[-1].setdefault(key, old)


@dataclass(frozen=True)
class Event:
    kind: str
    height: int
    attrs: dict = field(default_factory=dict)


@dataclass
class TxResult:
    ok: bool
    reason: str = ""
    detail: str = ""
    events: list[Event] = field(default_factory=list)


class Ledger:
    """One simulated chain with a static signer set and a logical clock."""

    def __init__(self, ledger_id: str, signer_count: int = 4, block_time_step: int = 1,
                 genesis_time: int = 1_700_000_000, client_type: str = "quorum",
                 seed: int = 0, retention: int = 256):
        if not _LEDGER_ID.fullmatch(ledger_id):
            raise ValueError(f"invalid ledger id {ledger_id!r}")
        if client_type not in ("quorum", "solo"):
            raise ValueError("client_type must be quorum or solo")
        if client_type == "solo":
            signer_count = 1
        if signer_count < 1 or block_time_step < 0:
            raise ValueError("need at least one signer and a non-negative time step")
        self.id = ledger_id
        self.client_type = ClientType.QUORUM if client_type == "quorum" else ClientType.SOLO
        self.block_time_step = block_time_step
        self.prefix = COMMITMENT_PREFIX
        self.retention = retention
        self._secrets = tuple(sha256(b"signer", u64(seed), lp_str(ledger_id), u64(i))
                              for i in range(signer_count))
        self.signer_keys = tuple(_public_key(s) for s in self._secrets)
        self._cap_secret = sha256(b"capability", u64(seed), lp_str(ledger_id))
        self.store = ProvableStore(retention)
        self.private = PrivateStore()
        self.router = Router(self)
        if self.client_type == ClientType.QUORUM:
            self.signer_material = clients.signer_set_digest(self.signer_keys)
        else:
            self.signer_material = self.signer_keys[0]
        genesis = BlockHeader(ledger_id, 0, genesis_time, EMPTY_ROOT, bytes(32), self.signer_material)
        self.blocks: list[BlockHeader] = [genesis]
        self._signed: dict[int, Header] = {}
        self.forks: list[Header] = []
        self.events: list[list[Event]] = [[]]
        self._pending_events: list[Event] = []
        self._tx_events: list[Event] | None = None
        self.next_timestamp = genesis_time + block_time_step
        self.halted = False
        # packet / ack indexes for query-mode relaying (a full node's tx index)
        self.sent_packets: dict[tuple[str, str, int], Any] = {}
        self.written_acks: dict[tuple[str, str, int], bytes] = {}

    # -- heights and time ------------------------------------------------------
    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def executing_height(self) -> int:
        return self.height + 1

    @property
    def current_timestamp(self) -> int:
        return self.next_timestamp

    @property
    def latest_block(self) -> BlockHeader:
        return self.blocks[-1]

    def block_header(self, height: int) -> BlockHeader:
        if not 0 <= height <= self.height:
            raise HeightPruned(f"{self.id} has no block {height}")
        if height + self.retention <= self.height:
            raise HeightPruned(f"block {height} is outside the retention window")
        return self.blocks[height]

    # -- IBC store access ---------------------------------------------------------
    def ibc_get(self, path: str) -> Optional[bytes]:
        return self.store.get(f"{self.prefix}/{path}")

    def ibc_set(self, path: str, value: bytes) -> None:
        self.store.set(f"{self.prefix}/{path}", value)

    def ibc_delete(self, path: str) -> None:
        self.store.delete(f"{self.prefix}/{path}")

    def ibc_items(self, path_prefix: str) -> Iterator[tuple[str, bytes]]:
        return self.store.items(f"{self.prefix}/{path_prefix}")

    def ibc_get_at(self, height: int, path: str) -> Optional[bytes]:
        return self.store.get_at(height, f"{self.prefix}/{path}")

    def prove(self, height: int, path: str):
        """Membership proof if the path is set at ``height``, otherwise non-membership."""
        key = f"{self.prefix}/{path}"
        if self.store.get_at(height, key) is None:
            return self.store.prove_non_membership(height, key)
        return self.store.prove_membership(height, key)

    # -- ports and capabilities -----------------------------------------------------
    def new_capability(self) -> bytes:
        n = self.private.get(("capcounter",), 0)
        self.private.set(("capcounter",), n + 1)
        return sha256(self._cap_secret, u64(n))

    def bind_port(self, module_id: str, port_id: str) -> bytes:
        clients.validate_identifier(port_id)
        if ("port", port_id) in self.private:
            raise PortAlreadyBound(port_id)
        cap = self.new_capability()
        self.private.set(("port", port_id), (module_id, cap))
        return cap

    def release_port(self, port_id: str, capability: bytes) -> None:
        self.authenticate_port(port_id, capability)
        self.private.delete(("port", port_id))

    def port_owner(self, port_id: str) -> Optional[str]:
        entry = self.private.get(("port", port_id))
        return entry[0] if entry else None

    def authenticate_port(self, port_id: str, capability: bytes) -> None:
        entry = self.private.get(("port", port_id))
        if entry is None:
            raise PortNotBound(port_id)
        if entry[1] != capability:
            raise Unauthorized(f"capability does not own port {port_id}")

    # -- events and transactions -----------------------------------------------------
    def emit(self, kind: str, **attrs) -> None:
        event = Event(kind, self.executing_height, attrs)
        if self._tx_events is not None:
            self._tx_events.append(event)
        else:
            self._pending_events.append(event)

    @contextmanager
    def transaction(self):
        """Atomic scope; nests, and events surface only when the outermost one succeeds."""
        outer = self._tx_events is None
        if outer:
            self._tx_events = []
        mark = len(self._tx_events)
        self.store.begin()
        self.private.begin()
        try:
            yield
        except BaseException:
            self.store.rollback()
            self.private.rollback()
            del self._tx_events[mark:]
            if outer:
                self._tx_events = None
            raise
        self.store.release()
        self.private.release()
        if outer:
            self._publish(self._tx_events)
            self._tx_events = None

    def _publish(self, events: list[Event]) -> None:
        for ev in events:
            if ev.kind == "SendPacket":
                p = ev.attrs["packet"]
                self.sent_packets[(p.source_port, p.source_channel, p.sequence)] = p
            elif ev.kind == "WriteAck":
                p = ev.attrs["packet"]
                self.written_acks[(p.dest_port, p.dest_channel, p.sequence)] = ev.attrs["ack"]
        self._pending_events.extend(events)

    def execute_transaction(self, datagrams) -> list[Event]:
        """Apply datagrams in order, all or nothing. Raises TxAborted."""
        if self.halted:
            raise TxAborted("LedgerHalted", LedgerHalted(self.id))
        mark = len(self._pending_events)
        try:
            with self.transaction():
                for dg in datagrams:
                    self.router.dispatch(dg)
        except (IBCError, DecodeError) as e:
            raise TxAborted(type(e).__name__, e) from e
        return self._pending_events[mark:]

    def submit(self, datagrams) -> TxResult:
        try:
            events = self.execute_transaction(datagrams)
        except TxAborted as e:
            return TxResult(False, e.reason, str(e.cause) if e.cause else "")
        return TxResult(True, events=events)

    def dry_run(self, datagrams) -> TxResult:
        """Run datagrams and always roll back; reports what would have happened."""
        if self.halted:
            return TxResult(False, "LedgerHalted")
        marker = RuntimeError("dry run")
        outcome = TxResult(True)
        try:
            with self.transaction():
                try:
                    for dg in datagrams:
                        self.router.dispatch(dg)
                except (IBCError, DecodeError) as e:
                    outcome = TxResult(False, type(e).__name__, str(e))
                raise marker
        except RuntimeError as e:
            if e is not marker:
                raise
        return outcome

    # -- block production ----------------------------------------------------------
    def produce_block(self, timestamp: Optional[int] = None) -> Optional[BlockHeader]:
        if self.halted:
            return None
        ts = self.next_timestamp if timestamp is None else timestamp
        if ts < self.latest_block.timestamp:
            raise ValueError("block timestamps must be non-decreasing")
        root = self.store.commit()
        block = BlockHeader(self.id, self.height + 1, ts, root,
                            self.latest_block.digest(), self.signer_material)
        self.blocks.append(block)
        self.events.append(self._pending_events)
        self._pending_events = []
        self.next_timestamp = ts + self.block_time_step
        return block

    def halt(self) -> None:
        self.halted = True

    def resume(self, next_timestamp: Optional[int] = None) -> None:
        self.halted = False
        if next_timestamp is not None:
            self.next_timestamp = max(next_timestamp, self.latest_block.timestamp)

    def _sign_block(self, block: BlockHeader, signers: range) -> Header:
        msg = block.digest()
        return Header(block, tuple(Signature(i, _sign(self._secrets[i], msg)) for i in signers))

    def signed_header(self, height: int) -> Header:
        """Quorum-signed header for a committed block (signatures made lazily)."""
        hdr = self._signed.get(height)
        if hdr is None:
            block = self.block_header(height)
            hdr = self._signed[height] = self._sign_block(block, range(self.quorum))
        return hdr

    @property
    def quorum(self) -> int:
        return clients.quorum(len(self.signer_keys)) if self.client_type == ClientType.QUORUM else 1

    def equivocate(self, height: Optional[int] = None) -> Header:
        """Sign a conflicting block at ``height`` (default: the latest)."""
        h = self.height if height is None else height
        if h < 1:
            raise ValueError("cannot equivocate on genesis")
        real = self.blocks[h]
        fork = BlockHeader(self.id, h, real.timestamp,
                           sha256(b"fork", real.app_root, u64(len(self.forks))),
                           real.prev_digest, real.signer_set_digest)
        hdr = self._sign_block(fork, range(self.quorum))
        self.forks.append(hdr)
        return hdr

    # -- introspection -------------------------------------------------------------
    def own_consensus_state(self, height: int) -> ConsensusState:
        block = self.block_header(height)
        return ConsensusState(self.client_type, height, block.app_root, block.timestamp,
                              self.signer_material)

    query_consensus_state_at = own_consensus_state

    def client_state_for_counterparty(self, trusting_period: Optional[int] = None) -> ClientState:
        """Initial ClientState a counterparty uses to track this ledger."""
        if trusting_period is None:
            trusting_period = clients.DEFAULT_TRUSTING_BLOCKS * max(self.block_time_step, 1)
        return ClientState(self.client_type, self.id, self.height, 0, trusting_period,
                           self.signer_keys)

    def events_between(self, lo: int, hi: int) -> Iterator[Event]:
        """Committed events in blocks ``lo..hi`` inclusive."""
        for h in range(max(lo, 1), min(hi, self.height) + 1):
            yield from self.events[h]

    def validate_block(self, header: Header) -> bool:
        """Full-node replay check of a header extending this ledger's chain."""
        b = header.block
        if b.chain_id != self.id or not 1 <= b.height <= self.height:
            return False
        prev = self.blocks[b.height - 1]
        if b.prev_digest != prev.digest() or b.timestamp < prev.timestamp:
            return False
        if b.signer_set_digest != self.signer_material:
            return False
        # replaying the transactions yields this ledger's own root
        if b.app_root != self.blocks[b.height].app_root:
            return False
        cs = ClientState(self.client_type, self.id, 0, 0, 1, self.signer_keys)
        return clients.header_valid(cs, header)
