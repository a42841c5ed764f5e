"""Relayer processes: read two ledgers, build proof-carrying datagrams, submit them.

Relayers are untrusted. Fault injection (drop, duplicate, reorder, corrupt) is
seeded so a run is reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional

from . import client as clients
from .channel import (
    ChanState, ChannelEnd, Order, Packet, ack_path, channel_path, commitment_path,
    next_recv_path,
)
from .client import ClientState, Misbehaviour
from .connection import ConnState, ConnectionEnd, connection_path
from .datagrams import (
    PACKET_KINDS, ChanCloseConfirm, ChanOpenAck, ChanOpenConfirm, ChanOpenTry, ClientMisbehaviour,
    ClientUpdate, ConnOpenAck, ConnOpenConfirm, ConnOpenTry, Datagram, PacketAck, PacketCleanup,
    PacketRecv, PacketTimeout, PacketTimeoutOnClose,
)
from .ledger import Ledger


@dataclass(frozen=True)
class FaultProfile:
    drop: Fraction = Fraction(0)
    dup: Fraction = Fraction(0)
    reorder: Fraction = Fraction(0)
    corrupt: Fraction = Fraction(0)
    seed: int = 0

    def __post_init__(self):
        for name in ("drop", "dup", "reorder", "corrupt"):
            v = Fraction(getattr(self, name))
            if not 0 <= v <= 1:
                raise ValueError(f"{name} probability must lie in [0, 1]")
            object.__setattr__(self, name, v)

    @property
    def honest(self) -> bool:
        return not (self.drop or self.dup or self.reorder or self.corrupt)


@dataclass(frozen=True)
class Submission:
    relayer: str
    kind: str
    target: str
    ok: bool
    reason: str = ""


@dataclass
class SubmissionReport:
    relayer: str
    entries: list[Submission] = field(default_factory=list)


def _seq_of(key: str) -> int:
    return int(key.rsplit("/", 1)[1])


def _path(ledger: Ledger, key: str) -> str:
    return key[len(ledger.prefix) + 1:]


class Relayer:
    def __init__(self, relayer_id: str, a: Ledger, b: Ledger, mode: str = "event",
                 poll_every: int = 1, faults: Optional[FaultProfile] = None,
                 bundle: bool = False):
        if mode not in ("event", "query"):
            raise ValueError("mode must be 'event' or 'query'")
        if poll_every < 1:
            raise ValueError("poll_every must be at least 1")
        self.id = relayer_id
        self.a, self.b = a, b
        self.mode = mode
        self.poll_every = poll_every
        self.faults = faults or FaultProfile()
        self.bundle = bundle
        self.paused = False
        self._rng = random.Random(f"{self.faults.seed}:{relayer_id}")
        self._scanned: dict[str, int] = {a.id: 0, b.id: 0}
        self._polled: dict[str, int] = {a.id: -10**9, b.id: -10**9}
        self._last_seq: dict[tuple[str, str, str], int] = {}
        self.packets: dict[tuple[str, str, str, int], Packet] = {}
        self.acks: dict[tuple[str, str, str, int], bytes] = {}

    # -- observation -------------------------------------------------------------
    def _scan(self, ledger: Ledger) -> None:
        if self.mode == "event":
            lo = self._scanned[ledger.id] + 1
            for ev in ledger.events_between(lo, ledger.height):
                if ev.kind == "SendPacket":
                    p = ev.attrs["packet"]
                    self.packets[(ledger.id,) + p.key] = p
                elif ev.kind == "WriteAck":
                    p = ev.attrs["packet"]
                    self.acks[(ledger.id, p.dest_port, p.dest_channel, p.sequence)] = ev.attrs["ack"]
        else:
            # poll nextSequenceSend and fetch the gap since the last relayed sequence
            h = ledger.height
            for key in ledger.store.keys_at(h, f"{ledger.prefix}/nextSequenceSend/"):
                parts = key.split("/")
                port, chan = parts[3], parts[5]
                nxt = int.from_bytes(ledger.store.get_at(h, key), "big")
                last = self._last_seq.get((ledger.id, port, chan), 0)
                for seq in range(last + 1, nxt):
                    p = ledger.sent_packets.get((port, chan, seq))
                    if p is not None:
                        self.packets[(ledger.id, port, chan, seq)] = p
                self._last_seq[(ledger.id, port, chan)] = nxt - 1
        self._scanned[ledger.id] = ledger.height

    def _ack_bytes(self, ledger: Ledger, port: str, chan: str, seq: int) -> Optional[bytes]:
        if self.mode == "event":
            return self.acks.get((ledger.id, port, chan, seq))
        return ledger.written_acks.get((port, chan, seq))

    def _other(self, ledger: Ledger) -> Ledger:
        return self.b if ledger is self.a else self.a

    # -- datagram construction -----------------------------------------------------
    def _client_ids(self, src: Ledger, dst: Ledger) -> list[str]:
        ids = set()
        for key in dst.store.keys_at(dst.height, f"{dst.prefix}/connections/"):
            ids.add(ConnectionEnd.decode(dst.store.get_at(dst.height, key)).client_id)
        for key in src.store.keys_at(src.height, f"{src.prefix}/connections/"):
            ids.add(ConnectionEnd.decode(src.store.get_at(src.height, key)).counterparty_client_id)
        out = []
        for cid in sorted(ids):
            raw = dst.ibc_get(clients.client_path(cid))
            if raw is not None and ClientState.decode(raw).chain_id == src.id:
                out.append(cid)
        return out

    def pending_datagrams(self, src: Ledger, dst: Ledger) -> list[Datagram]:
        """Datagrams for ``dst`` proven against ``src``, in dependency order."""
        out: list[Datagram] = []
        for cid in self._client_ids(src, dst):
            out.extend(self._for_client(src, dst, cid))
        return out

    def _for_client(self, src: Ledger, dst: Ledger, cid: str) -> list[Datagram]:
        cs = ClientState.decode(dst.ibc_get(clients.client_path(cid)))
        head: list[Datagram] = []
        if not cs.frozen:
            for fork in src.forks:
                if fork.height <= src.height:
                    evidence = Misbehaviour(src.signed_header(fork.height), fork)
                    head.append(ClientMisbehaviour(cid, evidence))
            if head:
                return head
            ph = src.height
        else:
            heights = [h for h in clients.consensus_heights(dst, cid) if h < cs.frozen_height]
            if not heights:
                return []
            ph = heights[-1]
        if ph + src.retention <= src.height:
            return []
        body = (self._handshakes(src, dst, cid, ph) + self._recvs(src, dst, cid, ph)
                + self._acks(src, dst, cid, ph) + self.track_timeouts(src, dst, cid, ph))
        if not cs.frozen and cs.latest_height < ph:
            latest = clients.get_consensus_state(dst, cid, cs.latest_height)
            stale = dst.current_timestamp - latest.timestamp >= cs.trusting_period // 2
            if body or stale:
                head.append(ClientUpdate(cid, src.signed_header(ph)))
        return head + body

    def _conn_at(self, ledger: Ledger, h: int, ident: str) -> Optional[ConnectionEnd]:
        raw = ledger.ibc_get_at(h, connection_path(ident))
        return None if raw is None else ConnectionEnd.decode(raw)

    def _chan_at(self, ledger: Ledger, h: int, port: str, chan: str) -> Optional[ChannelEnd]:
        raw = ledger.ibc_get_at(h, channel_path(port, chan))
        return None if raw is None else ChannelEnd.decode(raw)

    def _handshakes(self, src: Ledger, dst: Ledger, cid: str, ph: int) -> list[Datagram]:
        out: list[Datagram] = []
        dh = dst.height
        conns_src: dict[str, ConnectionEnd] = {}
        for key in src.store.keys_at(ph, f"{src.prefix}/connections/"):
            s_id = key.rsplit("/", 1)[1]
            es = ConnectionEnd.decode(src.store.get_at(ph, key))
            if es.counterparty_client_id != cid:
                continue
            conns_src[s_id] = es
            d_id = es.counterparty_connection_id
            ed = self._conn_at(dst, dh, d_id)
            proof = src.prove(ph, connection_path(s_id))
            if es.state in (ConnState.INIT, ConnState.TRYOPEN):
                src_client = clients.ClientState.decode(
                    src.ibc_get_at(ph, clients.client_path(es.client_id)))
                ch = src_client.latest_height
                proof_cons = src.prove(ph, clients.consensus_path(es.client_id, ch))
                if es.state == ConnState.INIT and (
                        ed is None or (ed.state == ConnState.INIT
                                       and ed.counterparty_connection_id == s_id)):
                    out.append(ConnOpenTry(d_id, s_id, src.prefix, es.client_id, cid, es.versions,
                                           proof, proof_cons, ph, ch))
                elif (es.state == ConnState.TRYOPEN and ed is not None
                      and ed.state in (ConnState.INIT, ConnState.TRYOPEN)
                      and ed.counterparty_connection_id == s_id):
                    out.append(ConnOpenAck(d_id, es.version, proof, proof_cons, ph, ch))
            elif es.state == ConnState.OPEN and ed is not None and ed.state == ConnState.TRYOPEN:
                out.append(ConnOpenConfirm(d_id, proof, ph))
        for port, chan, es in self._channels(src, ph):
            conn = conns_src.get(es.connection_hops[0])
            if conn is None:
                continue
            ed = self._chan_at(dst, dh, es.counterparty_port, es.counterparty_channel)
            dconn = self._conn_at(dst, dh, conn.counterparty_connection_id)
            if dconn is None or dconn.state != ConnState.OPEN:
                continue
            proof = src.prove(ph, channel_path(port, chan))
            cp, cc = es.counterparty_port, es.counterparty_channel
            if es.state == ChanState.INIT and (
                    ed is None or (ed.state == ChanState.INIT and ed.counterparty_channel == chan)):
                out.append(ChanOpenTry(es.ordering, (conn.counterparty_connection_id,), cp, cc,
                                       port, chan, es.version, proof, ph))
            elif (es.state == ChanState.TRYOPEN and ed is not None
                  and ed.state in (ChanState.INIT, ChanState.TRYOPEN)):
                out.append(ChanOpenAck(cp, cc, es.version, proof, ph))
            elif es.state == ChanState.OPEN and ed is not None and ed.state == ChanState.TRYOPEN:
                out.append(ChanOpenConfirm(cp, cc, proof, ph))
            elif (es.state == ChanState.CLOSED and ed is not None
                  and ed.state != ChanState.CLOSED):
                out.append(ChanCloseConfirm(cp, cc, proof, ph))
        return out

    def _channels(self, ledger: Ledger, h: int):
        for key in ledger.store.keys_at(h, f"{ledger.prefix}/channelEnds/ports/"):
            parts = key.split("/")
            yield parts[3], parts[5], ChannelEnd.decode(ledger.store.get_at(h, key))

    def _uses_client(self, ledger: Ledger, h: int, end: ChannelEnd, cid: str, local: bool) -> bool:
        conn = self._conn_at(ledger, h, end.connection_hops[0])
        if conn is None:
            return False
        return (conn.client_id if local else conn.counterparty_client_id) == cid

    def _commitments(self, ledger: Ledger, h: int, port: str, chan: str) -> list[int]:
        keys = ledger.store.keys_at(h, f"{ledger.prefix}/commitments/ports/{port}/channels/{chan}/sequences/")
        return sorted(_seq_of(k) for k in keys)

    @staticmethod
    def _timed_out_on(ledger: Ledger, p: Packet) -> bool:
        return bool((p.timeout_height and ledger.executing_height >= p.timeout_height)
                    or (p.timeout_timestamp and ledger.current_timestamp >= p.timeout_timestamp))

    def _recvs(self, src: Ledger, dst: Ledger, cid: str, ph: int) -> list[Datagram]:
        out: list[Datagram] = []
        dh = dst.height
        for port, chan, es in self._channels(src, ph):
            if not self._uses_client(src, ph, es, cid, local=False):
                continue
            ed = self._chan_at(dst, dh, es.counterparty_port, es.counterparty_channel)
            # a closed sender gets its packets timed out on close instead
            if es.state != ChanState.OPEN or ed is None or ed.state != ChanState.OPEN:
                continue
            next_recv = None
            if ed.ordering == Order.ORDERED:
                raw = dst.ibc_get_at(dh, next_recv_path(es.counterparty_port, es.counterparty_channel))
                next_recv = int.from_bytes(raw, "big") if raw else 1
            for seq in self._commitments(src, ph, port, chan):
                p = self.packets.get((src.id, port, chan, seq))
                if p is None or self._timed_out_on(dst, p):
                    continue
                if next_recv is not None:
                    if seq < next_recv:
                        continue
                elif dst.ibc_get_at(dh, ack_path(p.dest_port, p.dest_channel, seq)) is not None:
                    continue
                out.append(PacketRecv(p, src.prove(ph, commitment_path(port, chan, seq)), ph))
        return out

    def _acks(self, src: Ledger, dst: Ledger, cid: str, ph: int) -> list[Datagram]:
        out: list[Datagram] = []
        dh = dst.height
        for port, chan, es in self._channels(src, ph):
            if not self._uses_client(src, ph, es, cid, local=False):
                continue
            cp, cc = es.counterparty_port, es.counterparty_channel
            ed = self._chan_at(dst, dh, cp, cc)
            if es.state == ChanState.CLOSED or ed is None or ed.state != ChanState.OPEN:
                continue
            for seq in self._commitments(dst, dh, cp, cc):
                p = self.packets.get((dst.id, cp, cc, seq))
                if p is None or src.ibc_get_at(ph, ack_path(port, chan, seq)) is None:
                    continue
                ack = self._ack_bytes(src, port, chan, seq)
                if ack is None:
                    continue
                out.append(PacketAck(p, ack, src.prove(ph, ack_path(port, chan, seq)), ph))
        return out

    def track_timeouts(self, src: Ledger, dst: Ledger, cid: str, ph: int) -> list[Datagram]:
        """Timeout, timeout-on-close and cleanup datagrams for packets sent by ``dst``."""
        out: list[Datagram] = []
        dh = dst.height
        src_ts = src.block_header(ph).timestamp
        for dp, dc, ed in self._channels(dst, dh):
            if not self._uses_client(dst, dh, ed, cid, local=True):
                continue
            sp, sc = ed.counterparty_port, ed.counterparty_channel
            es = self._chan_at(src, ph, sp, sc)
            if es is None:
                continue
            ordered = ed.ordering == Order.ORDERED
            next_recv = None
            if ordered:
                raw = src.ibc_get_at(ph, next_recv_path(sp, sc))
                next_recv = int.from_bytes(raw, "big") if raw else None
                if next_recv is None:
                    continue
            for seq in self._commitments(dst, dh, dp, dc):
                p = self.packets.get((dst.id, dp, dc, seq))
                if p is None:
                    continue
                if ordered:
                    received = next_recv > seq
                    unreceived_proof = src.prove(ph, next_recv_path(sp, sc))
                else:
                    received = src.ibc_get_at(ph, ack_path(sp, sc, seq)) is not None
                    unreceived_proof = None if received else src.prove(ph, ack_path(sp, sc, seq))
                if received:
                    if ordered and src.ibc_get_at(ph, ack_path(sp, sc, seq)) is None \
                            and ed.state == ChanState.OPEN:
                        out.append(PacketCleanup(p, unreceived_proof, ph, next_recv, None))
                    continue
                if es.state == ChanState.CLOSED:
                    out.append(PacketTimeoutOnClose(p, unreceived_proof,
                                                    src.prove(ph, channel_path(sp, sc)), ph,
                                                    next_recv))
                    continue
                expired = ((p.timeout_height and ph >= p.timeout_height)
                           or (p.timeout_timestamp and src_ts > p.timeout_timestamp))
                if expired and ed.state == ChanState.OPEN:
                    out.append(PacketTimeout(p, unreceived_proof, ph, next_recv))
        return out

    # -- faults and submission -------------------------------------------------------
    def _corrupt(self, dg: Datagram) -> Datagram:
        p = dg.packet
        if not p.data:
            return dg
        data = bytearray(p.data)
        i = self._rng.randrange(len(data))
        data[i] ^= self._rng.randrange(1, 256)
        return replace(dg, packet=replace(p, data=bytes(data)))

    def apply_faults(self, datagrams: list[Datagram]) -> list[Datagram]:
        f = self.faults
        if f.honest:
            return list(datagrams)
        out: list[Datagram] = []
        for dg in datagrams:
            if f.drop and self._rng.random() < f.drop:
                continue
            if f.corrupt and dg.kind in PACKET_KINDS and self._rng.random() < f.corrupt:
                dg = self._corrupt(dg)
            out.append(dg)
            if f.dup and self._rng.random() < f.dup:
                out.append(dg)
        if f.reorder and self._rng.random() < f.reorder:
            self._rng.shuffle(out)
        return out

    def _submit(self, dst: Ledger, datagrams: Iterable[Datagram], report: SubmissionReport) -> None:
        datagrams = list(datagrams)
        if not datagrams:
            return
        if self.bundle and len(datagrams) > 1:
            res = dst.submit(datagrams)
            report.entries.extend(Submission(self.id, dg.kind.name, dst.id, res.ok, res.reason)
                                  for dg in datagrams)
            if res.ok:
                return
            # one stale datagram sinks a bundle; retry them one by one
        for dg in datagrams:
            res = dst.submit([dg])
            report.entries.append(Submission(self.id, dg.kind.name, dst.id, res.ok, res.reason))

    def relay_once(self) -> SubmissionReport:
        report = SubmissionReport(self.id)
        if self.paused:
            return report
        for ledger in (self.a, self.b):
            self._scan(ledger)
        for src, dst in ((self.a, self.b), (self.b, self.a)):
            if dst.halted or src.height - self._polled[src.id] < self.poll_every:
                continue
            self._polled[src.id] = src.height
            pending = self.pending_datagrams(src, dst)
            self._submit(dst, self.apply_faults(pending), report)
        for ledger in (self.a, self.b):
            self._prune(ledger)
        return report

    def _prune(self, ledger: Ledger) -> None:
        dead = [k for k in self.packets if k[0] == ledger.id
                and ledger.ibc_get(commitment_path(k[1], k[2], k[3])) is None]
        for k in dead:
            p = self.packets.pop(k)
            self.acks.pop((self._other(ledger).id, p.dest_port, p.dest_channel, p.sequence), None)
