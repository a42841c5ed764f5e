"""Breadth-first exploration of handshake datagram interleavings between two ledgers.

The explored state is abstract: the pair of end states, which sides have
initiated or closed, and the multiset of datagrams a relayer has built but not
yet delivered (each labelled by its kind, target and the end states it was
built from). A concrete two-ledger simulation is carried along. Accepted
transactions fork it with a deep copy that shares committed history; a
delivery the target would reject (checked with a dry run) leaves it as is.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field

from ibcsim.channel import Order, find_channel
from ibcsim.connection import find_connection
from ibcsim.datagrams import ChanOpenInit, ConnOpenInit
from ibcsim.relayer import Relayer
from ibcsim.transfer import PORT, VERSION

from netutil import Pair

CONN, CHAN = "connection", "channel"
CONN_ID, CHAN_ID = "conn-x", "ch-x"

_KINDS = {
    CONN: ("ConnOpenTry", "ConnOpenAck", "ConnOpenConfirm"),
    CHAN: ("ChanOpenTry", "ChanOpenAck", "ChanOpenConfirm", "ChanCloseConfirm"),
}

_OPENING = {
    (None, None), ("INIT", None), ("INIT", "TRYOPEN"), ("OPEN", "TRYOPEN"), ("OPEN", "OPEN"),
}
_CROSSING = {("INIT", "INIT"), ("TRYOPEN", "TRYOPEN")}
_CLOSING = {("OPEN", "OPEN"), ("CLOSED", "OPEN"), ("CLOSED", "CLOSED")}


def _mirror(pairs):
    return pairs | {(b, a) for a, b in pairs}


ALLOWED = {
    CONN: _mirror(_OPENING | _CROSSING),
    CHAN: _mirror(_OPENING | _CROSSING | _CLOSING),
}

# the only moves an end may make
STEPS = {
    (None, "INIT"), (None, "TRYOPEN"), ("INIT", "TRYOPEN"), ("INIT", "OPEN"),
    ("TRYOPEN", "OPEN"), ("OPEN", "CLOSED"),
}


def fork(pair: Pair) -> Pair:
    """Deep copy that shares committed history, which is never mutated."""
    memo = {}
    for ledger in (pair.a, pair.b):
        frozen = [*ledger.store._snapshots.values(), *ledger.blocks, *ledger._signed.values(),
                  *ledger.events]
        memo.update((id(obj), obj) for obj in frozen)
    return copy.deepcopy(pair, memo)


@dataclass(frozen=True)
class Node:
    pair: Pair
    pool: tuple = ()  # (label, target side, updates, datagram)
    inited: frozenset = frozenset()
    closed: frozenset = frozenset()


@dataclass
class Report:
    visited: set = field(default_factory=set)
    violations: list = field(default_factory=list)
    nodes: int = 0
    transactions: int = 0
    rejected: int = 0
    max_pool: int = 0


class Explorer:
    def __init__(self, phase: str, pool_limit: int = 6, copies: int = 2):
        self.phase = phase
        self.pool_limit = pool_limit
        self.copies = copies  # how often one datagram may sit in the pool
        base = Pair()
        if phase == CHAN:
            base.connect(CONN_ID)
        base.relayer = None  # built datagrams come from a fresh relayer each time
        self.base = base

    def states(self, pair: Pair):
        out = []
        for ledger in (pair.a, pair.b):
            if self.phase == CONN:
                end = find_connection(ledger, CONN_ID)
            else:
                end = find_channel(ledger, PORT, CHAN_ID)
            out.append(end.state.name if end else None)
        return tuple(out)

    # -- transactions ----------------------------------------------------------------
    def _init(self, pair: Pair, side: int) -> None:
        host = (pair.a, pair.b)[side]
        if self.phase == CONN:
            client, cp = ("client-b", "client-a") if side == 0 else ("client-a", "client-b")
            dg = ConnOpenInit(CONN_ID, CONN_ID, "ibc", client, cp)
        else:
            dg = ChanOpenInit(Order.UNORDERED, (CONN_ID,), PORT, CHAN_ID, PORT, CHAN_ID, VERSION)
        host.submit([dg])

    @staticmethod
    def _close(pair: Pair, side: int) -> None:
        host, ctx = ((pair.a, pair.ctx_a), (pair.b, pair.ctx_b))[side]
        try:
            with host.transaction():
                ctx.close_channel(CHAN_ID)
        except Exception:
            pass

    def _built(self, pair: Pair) -> dict:
        """Handshake datagrams a relayer would build now, by (source side, kind)."""
        out = {}
        relayer = Relayer("explorer", pair.a, pair.b)
        for ledger in (pair.a, pair.b):
            relayer._scan(ledger)
        for side, (src, dst) in enumerate(((pair.a, pair.b), (pair.b, pair.a))):
            dgs = relayer.pending_datagrams(src, dst)
            updates = tuple(d for d in dgs if d.kind.name == "ClientUpdate")
            assert len(updates) <= 1
            for d in dgs:
                if d.kind.name in _KINDS[self.phase]:
                    out.setdefault((side, d.kind.name), []).append((updates, d))
        return out

    @staticmethod
    def _accepts(pair: Pair, side: int, updates, dg) -> bool:
        dst = (pair.b, pair.a)[side]
        return dst.dry_run([*updates, dg]).ok or dst.dry_run([dg]).ok

    # -- search ----------------------------------------------------------------------
    def _children(self, node: Node):
        pair, pool = node.pair, node.pool
        states = self.states(pair)
        labels = [entry[0] for entry in pool]
        room = len(pool) < self.pool_limit

        for side in (0, 1):
            if side not in node.inited:
                child = fork(pair)
                self._init(child, side)
                child.blocks()
                yield ("init", side), Node(child, pool, node.inited | {side}, node.closed), 1
            if (self.phase == CHAN and side not in node.closed and states[side] == "OPEN"
                    and states[1 - side] in ("OPEN", "CLOSED")):
                child = fork(pair)
                self._close(child, side)
                child.blocks()
                yield ("close", side), Node(child, pool, node.inited, node.closed | {side}), 1

        if room:
            for (side, kind), entries in sorted(self._built(pair).items()):
                label = (kind, side, states)
                if labels.count(label) >= self.copies:
                    continue
                new = tuple((label, side, u, d) for u, d in entries)
                yield ("build", side, kind), Node(pair, (pool + new)[: self.pool_limit],
                                                  node.inited, node.closed), 0

        for i, entry in enumerate(pool):
            label, side, updates, dg = entry
            if label in labels[:i]:
                continue  # identical to an earlier entry
            if room and labels.count(label) < self.copies:
                yield ("dup", i), Node(pair, pool + (entry,), node.inited, node.closed), 0
            rest = pool[:i] + pool[i + 1:]
            if not self._accepts(pair, side, updates, dg):
                yield ("reject", i), Node(pair, rest, node.inited, node.closed), -1
                continue
            child = fork(pair)
            dst = (child.b, child.a)[side]
            for u in updates:
                dst.submit([u])
            assert dst.submit([dg]).ok
            child.blocks()
            yield ("deliver", i), Node(child, rest, node.inited, node.closed), 1

    def _key(self, node: Node):
        return (self.states(node.pair), tuple(sorted(node.inited)), tuple(sorted(node.closed)),
                tuple(sorted((entry[0] for entry in node.pool), key=repr)))

    def _check(self, before, after, move, report: Report) -> None:
        if after not in ALLOWED[self.phase]:
            report.violations.append((before, move, after, "state pair not in table"))
        for old, new in zip(before, after):
            if old != new and (old, new) not in STEPS:
                report.violations.append((before, move, after, f"end moved {old} -> {new}"))

    def run(self) -> Report:
        report = Report()
        root = Node(self.base)
        seen = {self._key(root)}
        report.visited.add(self.states(self.base))
        queue = deque([root])
        while queue:
            node = queue.popleft()
            report.nodes += 1
            before = self.states(node.pair)
            for move, child, txs in self._children(node):
                if txs > 0:
                    report.transactions += txs
                elif txs < 0:
                    report.rejected += 1
                after = self.states(child.pair)
                report.visited.add(after)
                self._check(before, after, move, report)
                report.max_pool = max(report.max_pool, len(child.pool))
                key = self._key(child)
                if key not in seen:
                    seen.add(key)
                    queue.append(child)
        return report
