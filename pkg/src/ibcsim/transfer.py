"""Fungible token transfer over channels.

Sending a locally sourced denomination escrows it per channel; the receiver
mints a voucher named ``{destPort}/{destChannel}/{denom}``. Sending a voucher
back over the channel it arrived on burns it, and the source unescrows the
base denomination, never more than the channel holds in escrow. Failure
acknowledgements and timeouts refund the sender.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .channel import Packet, find_channel
from .encoding import DecodeError, Reader, lp_str
from .errors import (
    InsufficientBalance, InvalidTransfer, LedgerHalted, NoSuchChannel,
)
from .routing import IBCModule

VERSION = "ics20-like-1"
PORT = "transfer"
UINT256_MAX = 2**256 - 1


@dataclass(frozen=True)
class FungibleTokenPacketData:
    denom: str
    amount: int
    sender: str
    receiver: str

    def encode(self) -> bytes:
        if not 0 < self.amount <= UINT256_MAX:
            raise InvalidTransfer("amount must be a positive uint256")
        return (lp_str(self.denom) + self.amount.to_bytes(32, "big")
                + lp_str(self.sender) + lp_str(self.receiver))

    @classmethod
    def decode(cls, data: bytes) -> "FungibleTokenPacketData":
        r = Reader(data)
        out = cls(r.lp_str(), int.from_bytes(r.take(32), "big"), r.lp_str(), r.lp_str())
        r.done()
        if not out.denom or out.amount == 0:
            raise DecodeError("empty denomination or zero amount")
        return out


@dataclass(frozen=True)
class Acknowledgement:
    success: bool
    error: Optional[str] = None

    def encode(self) -> bytes:
        return b"\x01" if self.success else b"\x00" + lp_str(self.error or "")

    @classmethod
    def decode(cls, data: bytes) -> "Acknowledgement":
        r = Reader(data)
        ok = r.u8()
        if ok == 1:
            r.done()
            return cls(True)
        if ok != 0:
            raise DecodeError("bad acknowledgement flag")
        err = r.lp_str()
        r.done()
        return cls(False, err)


def voucher_prefix(port: str, channel: str) -> str:
    return f"{port}/{channel}/"


def split_trace(denom: str) -> tuple[list[tuple[str, str]], str]:
    """Split a rendered denomination into its (port, channel) hops and base denom."""
    *path, base = denom.split("/")
    if len(path) % 2 or not all(path) or not base:
        raise ValueError(f"malformed denomination {denom!r}")
    return [(path[i], path[i + 1]) for i in range(0, len(path), 2)], base


class TransferModule(IBCModule):
    version = VERSION

    # -- state -------------------------------------------------------------------
    @property
    def _state(self):
        return self.ctx.ledger.private

    def register_account(self, account: str) -> None:
        self._state.set(("account", account), True)

    def has_account(self, account: str) -> bool:
        return ("account", account) in self._state

    def balance(self, account: str, denom: str) -> int:
        return self._state.get(("bank", account, denom), 0)

    def escrow(self, channel: str, denom: str) -> int:
        return self._state.get(("escrow", channel, denom), 0)

    def vouchers(self, channel: str, denom: str) -> int:
        return self._state.get(("vouchers", channel, denom), 0)

    def _add(self, key: tuple, delta: int) -> None:
        new = self._state.get(key, 0) + delta
        if new < 0:
            raise InsufficientBalance(f"{key} would go negative")
        if new > UINT256_MAX:
            raise InvalidTransfer(f"{key} overflows uint256")
        if new:
            self._state.set(key, new)
        else:
            self._state.delete(key)

    def _credit(self, account: str, denom: str, amount: int) -> None:
        self._add(("bank", account, denom), amount)

    def mint_genesis(self, account: str, denom: str, amount: int) -> None:
        """Initial funding of a locally sourced denomination."""
        if "/" in denom or not denom:
            raise InvalidTransfer("base denominations may not contain '/'")
        self.register_account(account)
        self._credit(account, denom, amount)

    def byzantine_mint(self, account: str, denom: str, amount: int) -> None:
        """Fault injection: create vouchers with no backing escrow anywhere."""
        hops, _base = split_trace(denom)
        if not hops:
            raise InvalidTransfer("only voucher denominations can be minted out of thin air")
        self.register_account(account)
        self._credit(account, denom, amount)
        if hops[0][0] == self.ctx.port:
            # keep the books consistent so the fake vouchers can be sent back
            self._add(("vouchers", hops[0][1], denom), amount)
        self.ctx.ledger.emit("ByzantineMint", account=account, denom=denom, amount=amount)

    def accounts(self) -> dict[tuple[str, str], int]:
        return {(k[1], k[2]): v for k, v in self._state.items() if k[0] == "bank"}

    def escrows(self) -> dict[tuple[str, str], int]:
        return {(k[1], k[2]): v for k, v in self._state.items() if k[0] == "escrow"}

    def outstanding_vouchers(self) -> dict[tuple[str, str], int]:
        return {(k[1], k[2]): v for k, v in self._state.items() if k[0] == "vouchers"}

    def accounts_by_owner(self) -> dict[str, dict[str, int]]:
        """Every registered account with its non-zero balances, sorted."""
        out: dict[str, dict[str, int]] = {k[1]: {} for k, _ in self._state.items()
                                          if k[0] == "account"}
        for (account, denom), amount in sorted(self.accounts().items()):
            out.setdefault(account, {})[denom] = amount
        return {a: dict(sorted(c.items())) for a, c in sorted(out.items())}

    # -- sending -------------------------------------------------------------------
    def send_transfer(self, denom: str, amount: int, sender: str, receiver: str,
                      source_channel: str, timeout_height: int = 0,
                      timeout_timestamp: int = 0) -> int:
        """Escrow or burn, then send the packet. Atomic; returns the sequence."""
        ledger = self.ctx.ledger
        if ledger.halted:
            raise LedgerHalted(ledger.id)
        with ledger.transaction():
            return self._send(denom, amount, sender, receiver, source_channel,
                              timeout_height, timeout_timestamp)

    def _send(self, denom, amount, sender, receiver, source_channel, timeout_height,
              timeout_timestamp) -> int:
        end = find_channel(self.ctx.ledger, self.ctx.port, source_channel)
        if end is None:
            raise NoSuchChannel(f"{self.ctx.port}/{source_channel}")
        data = FungibleTokenPacketData(denom, amount, sender, receiver)
        payload = data.encode()
        if not denom:
            raise InvalidTransfer("empty denomination")
        if self.balance(sender, denom) < amount:
            raise InsufficientBalance(f"{sender} holds {self.balance(sender, denom)} {denom}")
        self._add(("bank", sender, denom), -amount)
        if denom.startswith(voucher_prefix(self.ctx.port, source_channel)):
            self._add(("vouchers", source_channel, denom), -amount)
            self.ctx.ledger.emit("TransferBurn", channel=source_channel, denom=denom, amount=amount)
        else:
            self._add(("escrow", source_channel, denom), amount)
            self.ctx.ledger.emit("TransferEscrow", channel=source_channel, denom=denom, amount=amount)
        seq = self.ctx.next_sequence_send(source_channel)
        packet = Packet(seq, timeout_height, timeout_timestamp, self.ctx.port, source_channel,
                        end.counterparty_port, end.counterparty_channel, payload)
        self.ctx.send_packet(packet)
        return seq

    # -- callbacks -----------------------------------------------------------------
    def on_recv_packet(self, packet: Packet) -> bytes:
        try:
            data = FungibleTokenPacketData.decode(packet.data)
        except DecodeError:
            return Acknowledgement(False, "malformed packet").encode()
        try:
            split_trace(data.denom)
        except ValueError:
            return Acknowledgement(False, "invalid denomination").encode()
        if not self.has_account(data.receiver):
            return Acknowledgement(False, "bad receiver").encode()
        source = voucher_prefix(packet.source_port, packet.source_channel)
        ledger = self.ctx.ledger
        if data.denom.startswith(source):
            base = data.denom[len(source):]
            if self.escrow(packet.dest_channel, base) < data.amount:
                ledger.emit("TransferContainment", channel=packet.dest_channel, denom=base,
                            amount=data.amount)
                return Acknowledgement(False, "containment").encode()
            if self.balance(data.receiver, base) + data.amount > UINT256_MAX:
                return Acknowledgement(False, "overflow").encode()
            self._add(("escrow", packet.dest_channel, base), -data.amount)
            self._credit(data.receiver, base, data.amount)
            ledger.emit("TransferUnescrow", channel=packet.dest_channel, denom=base,
                        amount=data.amount)
        else:
            voucher = voucher_prefix(packet.dest_port, packet.dest_channel) + data.denom
            if (self.balance(data.receiver, voucher) + data.amount > UINT256_MAX
                    or self.vouchers(packet.dest_channel, voucher) + data.amount > UINT256_MAX):
                return Acknowledgement(False, "overflow").encode()
            self._add(("vouchers", packet.dest_channel, voucher), data.amount)
            self._credit(data.receiver, voucher, data.amount)
            ledger.emit("TransferMint", channel=packet.dest_channel, denom=voucher,
                        amount=data.amount)
        return Acknowledgement(True).encode()

    def on_acknowledge_packet(self, packet: Packet, acknowledgement: bytes) -> None:
        try:
            ack = Acknowledgement.decode(acknowledgement)
        except DecodeError:
            ack = Acknowledgement(False, "undecodable acknowledgement")
        if not ack.success:
            self._refund(packet)

    def on_timeout_packet(self, packet: Packet) -> None:
        self._refund(packet)

    def _refund(self, packet: Packet) -> None:
        data = FungibleTokenPacketData.decode(packet.data)
        ledger = self.ctx.ledger
        if data.denom.startswith(voucher_prefix(packet.source_port, packet.source_channel)):
            self._add(("vouchers", packet.source_channel, data.denom), data.amount)
        else:
            self._add(("escrow", packet.source_channel, data.denom), -data.amount)
        self._credit(data.sender, data.denom, data.amount)
        ledger.emit("TransferRefund", channel=packet.source_channel, denom=data.denom,
                    amount=data.amount, burned=data.denom.startswith(
                        voucher_prefix(packet.source_port, packet.source_channel)))

