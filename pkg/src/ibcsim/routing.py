"""Routing module: one entry point for datagrams, dispatching to port owners.

Core handlers never call applications. The router runs the core handler and
the owning module's callback inside the same ledger transaction, so an abort in
either reverts both.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

from . import channel as chan
from . import client as clients
from . import connection as conns
from .channel import Order, Packet
from .client import ConsensusState
from .datagrams import Datagram, decode_datagram
from .encoding import DecodeError
from .errors import MalformedDatagram, MalformedState, Unauthorized, UnknownPort, VersionRejected

if TYPE_CHECKING:
    from .ledger import Ledger


class PortContext:
    """What a module may do on the ledger: act on its own port and nothing else."""

    def __init__(self, router: "Router", port: str, port_capability: bytes):
        self.router = router
        self.ledger = router.ledger
        self.port = port
        self._port_cap = port_capability

    def channel_capability(self, channel_id: str) -> bytes | None:
        return self.ledger.private.get(("modcap", self.port, channel_id))

    def _remember(self, channel_id: str, cap: bytes) -> None:
        self.ledger.private.set(("modcap", self.port, channel_id), cap)

    def send_packet(self, packet: Packet) -> None:
        chan.send_packet(self.ledger, packet, self.channel_capability(packet.source_channel) or b"")

    def next_sequence_send(self, channel_id: str) -> int:
        return chan.get_sequence(self.ledger, chan.next_send_path(self.port, channel_id))

    def chan_open_init(self, order: Order, connection_id: str, channel_id: str,
                       counterparty_port: str, counterparty_channel: str, version: str) -> bytes:
        cap = chan.chan_open_init(self.ledger, order, (connection_id,), self.port, channel_id,
                                  counterparty_port, counterparty_channel, version, self._port_cap)
        self._remember(channel_id, cap)
        return cap

    def close_channel(self, channel_id: str) -> None:
        chan.chan_close_init(self.ledger, self.port, channel_id,
                             self.channel_capability(channel_id) or b"")


class IBCModule:
    """Application callbacks with the default handshake policy."""

    version = ""

    def bind(self, ctx: PortContext) -> None:
        self.ctx = ctx

    def _check_version(self, version: str) -> None:
        if version != self.version:
            raise VersionRejected(f"{version!r} != {self.version!r}")

    def on_chan_open_init(self, order: Order, connection_id: str, channel_id: str,
                          counterparty_port: str, counterparty_channel: str, version: str) -> None:
        self._check_version(version)

    def on_chan_open_try(self, order: Order, connection_id: str, channel_id: str,
                         counterparty_port: str, counterparty_channel: str,
                         counterparty_version: str) -> str:
        self._check_version(counterparty_version)
        return self.version

    def on_chan_open_ack(self, channel_id: str, counterparty_version: str) -> None:
        self._check_version(counterparty_version)

    def on_chan_open_confirm(self, channel_id: str) -> None:
        pass

    def on_chan_close_init(self, channel_id: str) -> None:
        raise Unauthorized("module does not allow relayer-initiated closes")

    def on_chan_close_confirm(self, channel_id: str) -> None:
        pass

    def on_recv_packet(self, packet: Packet) -> bytes:
        return b""

    def on_acknowledge_packet(self, packet: Packet, acknowledgement: bytes) -> None:
        pass

    def on_timeout_packet(self, packet: Packet) -> None:
        pass


class Router:
    def __init__(self, ledger: "Ledger"):
        self.ledger = ledger
        self.modules: dict[str, tuple[IBCModule, PortContext]] = {}
        ledger.router = self

    def register_module(self, port: str, module: IBCModule, module_id: str | None = None) -> PortContext:
        cap = self.ledger.bind_port(module_id or type(module).__name__, port)
        ctx = PortContext(self, port, cap)
        self.modules[port] = (module, ctx)
        module.bind(ctx)
        return ctx

    def _module(self, port: str) -> tuple[IBCModule, PortContext]:
        entry = self.modules.get(port)
        if entry is None:
            raise UnknownPort(port)
        return entry

    def _cap(self, port: str, channel_id: str) -> bytes:
        _module, ctx = self._module(port)
        return ctx.channel_capability(channel_id) or b""

    def dispatch(self, dg: Datagram | bytes) -> None:
        if isinstance(dg, (bytes, bytearray)):
            dg = decode_datagram(bytes(dg))
        handler = getattr(self, f"_on_{dg.kind.name}", None)
        if handler is None:
            raise MalformedDatagram(f"unhandled datagram {dg.kind!r}")
        handler(dg)

    # clients and connections go straight to the core handlers
    def _on_ClientCreate(self, dg) -> None:
        try:
            consensus = ConsensusState.decode(dg.consensus_state)
        except DecodeError as e:
            raise MalformedState(str(e)) from e
        clients.create_client(self.ledger, dg.client_id, dg.client_state, consensus)

    def _on_ClientUpdate(self, dg) -> None:
        clients.update_client(self.ledger, dg.client_id, dg.header)

    def _on_ClientMisbehaviour(self, dg) -> None:
        clients.submit_misbehaviour(self.ledger, dg.client_id, dg.evidence)

    def _on_ConnOpenInit(self, dg) -> None:
        conns.conn_open_init(self.ledger, dg.connection_id, dg.desired_counterparty_id,
                             dg.counterparty_prefix, dg.client_id, dg.counterparty_client_id)

    def _on_ConnOpenTry(self, dg) -> None:
        conns.conn_open_try(self.ledger, dg.desired_id, dg.counterparty_connection_id,
                            dg.counterparty_prefix, dg.counterparty_client_id, dg.client_id,
                            dg.counterparty_versions, dg.proof_init, dg.proof_consensus,
                            dg.proof_height, dg.consensus_height)

    def _on_ConnOpenAck(self, dg) -> None:
        conns.conn_open_ack(self.ledger, dg.connection_id, dg.version, dg.proof_try,
                            dg.proof_consensus, dg.proof_height, dg.consensus_height)

    def _on_ConnOpenConfirm(self, dg) -> None:
        conns.conn_open_confirm(self.ledger, dg.connection_id, dg.proof_ack, dg.proof_height)

    # channel handshakes consult the module
    def _on_ChanOpenInit(self, dg) -> None:
        module, ctx = self._module(dg.port)
        if len(dg.connection_hops) == 1:
            module.on_chan_open_init(dg.order, dg.connection_hops[0], dg.channel,
                                     dg.counterparty_port, dg.counterparty_channel, dg.version)
        cap = chan.chan_open_init(self.ledger, dg.order, dg.connection_hops, dg.port, dg.channel,
                                  dg.counterparty_port, dg.counterparty_channel, dg.version,
                                  ctx._port_cap)
        ctx._remember(dg.channel, cap)

    def _on_ChanOpenTry(self, dg) -> None:
        module, ctx = self._module(dg.port)
        hop = dg.connection_hops[0] if dg.connection_hops else ""
        version = module.on_chan_open_try(dg.order, hop, dg.channel, dg.counterparty_port,
                                          dg.counterparty_channel, dg.counterparty_version)
        cap = chan.chan_open_try(self.ledger, dg.order, dg.connection_hops, dg.port, dg.channel,
                                 dg.counterparty_port, dg.counterparty_channel, version,
                                 dg.counterparty_version, dg.proof_init, dg.proof_height,
                                 ctx._port_cap)
        ctx._remember(dg.channel, cap)

    def _on_ChanOpenAck(self, dg) -> None:
        module, _ctx = self._module(dg.port)
        module.on_chan_open_ack(dg.channel, dg.counterparty_version)
        chan.chan_open_ack(self.ledger, dg.port, dg.channel, dg.counterparty_version,
                           dg.proof_try, dg.proof_height, self._cap(dg.port, dg.channel))

    def _on_ChanOpenConfirm(self, dg) -> None:
        module, _ctx = self._module(dg.port)
        chan.chan_open_confirm(self.ledger, dg.port, dg.channel, dg.proof_ack, dg.proof_height,
                               self._cap(dg.port, dg.channel))
        module.on_chan_open_confirm(dg.channel)

    def _on_ChanCloseInit(self, dg) -> None:
        module, _ctx = self._module(dg.port)
        module.on_chan_close_init(dg.channel)
        chan.chan_close_init(self.ledger, dg.port, dg.channel, self._cap(dg.port, dg.channel))

    def _on_ChanCloseConfirm(self, dg) -> None:
        module, _ctx = self._module(dg.port)
        chan.chan_close_confirm(self.ledger, dg.port, dg.channel, dg.proof_init, dg.proof_height,
                                self._cap(dg.port, dg.channel))
        module.on_chan_close_confirm(dg.channel)

    # packets
    def _on_PacketRecv(self, dg) -> None:
        p = dg.packet
        module, _ctx = self._module(p.dest_port)
        ack = module.on_recv_packet(p)
        chan.recv_packet(self.ledger, p, dg.proof, dg.proof_height, ack,
                         self._cap(p.dest_port, p.dest_channel))

    def _on_PacketAck(self, dg) -> None:
        p = dg.packet
        module, _ctx = self._module(p.source_port)
        chan.acknowledge_packet(self.ledger, p, dg.acknowledgement, dg.proof, dg.proof_height,
                                self._cap(p.source_port, p.source_channel))
        module.on_acknowledge_packet(p, dg.acknowledgement)

    def _on_PacketTimeout(self, dg) -> None:
        p = dg.packet
        module, _ctx = self._module(p.source_port)
        chan.timeout_packet(self.ledger, p, dg.proof, dg.proof_height, dg.next_sequence_recv,
                            self._cap(p.source_port, p.source_channel))
        module.on_timeout_packet(p)

    def _on_PacketTimeoutOnClose(self, dg) -> None:
        p = dg.packet
        module, _ctx = self._module(p.source_port)
        chan.timeout_on_close(self.ledger, p, dg.proof_unreceived, dg.proof_closed,
                              dg.proof_height, dg.next_sequence_recv,
                              self._cap(p.source_port, p.source_channel))
        module.on_timeout_packet(p)

    def _on_PacketCleanup(self, dg) -> None:
        p = dg.packet
        self._module(p.source_port)
        value = dg.next_sequence_recv if dg.next_sequence_recv is not None else dg.acknowledgement
        chan.cleanup_packet(self.ledger, p, dg.proof, dg.proof_height, value,
                            self._cap(p.source_port, p.source_channel))

