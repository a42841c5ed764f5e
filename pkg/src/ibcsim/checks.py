"""Offline invariant checks over a run trace.

Every check reads only trace records, so a trace written to disk can be
re-verified without re-running the scenario. Each check reports the first
violating record.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .errors import MalformedTrace


@dataclass(frozen=True)
class Verdict:
    ok: bool
    detail: str = ""
    index: Optional[int] = None

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        at = f" (record {self.index})" if self.index is not None else ""
        return f"FAIL{at}: {self.detail}"


class _Violation(Exception):
    def __init__(self, rec: Optional[dict], detail: str):
        super().__init__(detail)
        self.index = rec.get("i") if rec else None
        self.detail = detail


FINISH = ("AcknowledgePacket", "TimeoutPacket", "CleanupPacket")


class TraceView:
    """Indexes shared by the checks: channel topology and packet identities."""

    def __init__(self, records: list[dict]):
        if not records:
            raise MalformedTrace("empty trace")
        for n, rec in enumerate(records):
            for field in ("i", "step", "source", "kind"):
                if field not in rec:
                    raise MalformedTrace(f"record {n} lacks {field!r}")
            if rec["i"] != n:
                raise MalformedTrace(f"record {n} is numbered {rec['i']}")
        if records[0]["kind"] != "Begin":
            raise MalformedTrace("trace does not start with a Begin record")
        if records[-1]["kind"] != "End":
            raise MalformedTrace("trace does not finish with an End record (truncated?)")
        self.records = records
        self.begin = records[0]
        self.end = records[-1]
        try:
            self._index_topology()
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedTrace(f"bad Begin record: {e!r}") from None

    def _index_topology(self) -> None:
        b = self.begin
        self.ordering: dict[tuple[str, str, str], str] = {}
        self.peer: dict[tuple[str, str, str], tuple[str, str, str]] = {}
        self.client_of: dict[tuple[str, str, str], str] = {}
        for chan in b["channels"]:
            e1, e2 = chan["ends"]
            k1 = (e1["ledger"], e1["port"], e1["channel"])
            k2 = (e2["ledger"], e2["port"], e2["channel"])
            self.peer[k1], self.peer[k2] = k2, k1
            self.ordering[k1] = self.ordering[k2] = chan["ordering"]
            self.client_of[k1] = e1["client"]
            self.client_of[k2] = e2["client"]
        self.tracks = {(c["host"], c["id"]): c["tracks"] for c in b["clients"]}
        self.byzantine = set(b.get("byzantine", []))
        self.relayers = b["relayers"]
        self.ledgers = [l["id"] for l in b["ledgers"]]

    def packet_key(self, rec: dict) -> tuple[str, str, str, int]:
        """(sending ledger, source port, source channel, sequence) for a packet event."""
        try:
            p = rec["packet"]
            if rec["kind"] == "RecvPacket":
                src = self.peer[(rec["source"], p["destPort"], p["destChannel"])]
                if (src[1], src[2]) != (p["sourcePort"], p["sourceChannel"]):
                    raise _Violation(rec, "received packet names the wrong source channel")
                return (src[0], p["sourcePort"], p["sourceChannel"], p["sequence"])
            return (rec["source"], p["sourcePort"], p["sourceChannel"], p["sequence"])
        except (KeyError, TypeError) as e:
            raise MalformedTrace(f"record {rec.get('i')}: bad packet event ({e!r})") from None

    def packet_events(self, kinds: Iterable[str] = ("SendPacket", "RecvPacket") + FINISH):
        kinds = set(kinds)
        for rec in self.records:
            if rec["kind"] in kinds:
                yield rec, self.packet_key(rec)


def _fingerprint(p: dict) -> tuple:
    return (p["data"], p["timeoutHeight"], p["timeoutTimestamp"], p["destPort"], p["destChannel"])


def check_exactly_once(view: TraceView) -> None:
    sent: dict[tuple, tuple] = {}
    received: set[tuple] = set()
    finished: set[tuple] = set()
    for rec, key in view.packet_events():
        kind = rec["kind"]
        if kind == "SendPacket":
            if key in sent:
                raise _Violation(rec, f"sequence reused by send {key}")
            sent[key] = _fingerprint(rec["packet"])
            continue
        if key not in sent:
            raise _Violation(rec, f"{kind} for a packet that was never sent {key}")
        if _fingerprint(rec["packet"]) != sent[key]:
            raise _Violation(rec, f"{kind} carries different contents than were sent {key}")
        if kind == "RecvPacket":
            if key in received:
                raise _Violation(rec, f"packet received twice {key}")
            received.add(key)
        else:
            if key in finished:
                raise _Violation(rec, f"packet commitment cleared twice {key}")
            finished.add(key)


def check_deliver_xor_timeout(view: TraceView) -> None:
    received: set[tuple] = set()
    timed_out: set[tuple] = set()
    for rec, key in view.packet_events(("RecvPacket", "TimeoutPacket")):
        if rec["kind"] == "RecvPacket":
            received.add(key)
        else:
            timed_out.add(key)
        if key in received and key in timed_out:
            raise _Violation(rec, f"packet both received and timed out {key}")


def check_ordering(view: TraceView) -> None:
    next_recv: dict[tuple, int] = {}
    last_ack: dict[tuple, int] = {}
    for rec, key in view.packet_events(("RecvPacket", "AcknowledgePacket")):
        chan = key[:3]
        if view.ordering.get(chan) != "ORDERED":
            continue
        seq = key[3]
        if rec["kind"] == "RecvPacket":
            want = next_recv.get(chan, 1)
            if seq != want:
                raise _Violation(rec, f"ordered channel {chan} received {seq}, expected {want}")
            next_recv[chan] = seq + 1
        else:
            if seq <= last_ack.get(chan, 0):
                raise _Violation(rec, f"ordered channel {chan} acknowledged {seq} out of order")
            last_ack[chan] = seq


def _base_totals(accounts: dict[str, dict[str, int]]) -> dict[str, int]:
    out: dict[str, int] = {}
    for coins in accounts.values():
        for denom, amount in coins.items():
            if "/" not in denom:
                out[denom] = out.get(denom, 0) + amount
    return out


def check_conservation(view: TraceView) -> None:
    initial = {l: _base_totals(a) for l, a in view.begin["accounts"].items()}
    for rec in view.records:
        if rec["kind"] != "Supply":
            continue
        totals = {d: a for d, a in rec["balances"].items() if "/" not in d}
        for per_denom in rec["escrow"].values():
            for denom, amount in per_denom.items():
                if "/" not in denom:
                    totals[denom] = totals.get(denom, 0) + amount
        start = initial.get(rec["source"], {})
        for denom in sorted(set(totals) | set(start)):
            if totals.get(denom, 0) != start.get(denom, 0):
                raise _Violation(rec, f"{rec['source']} supply of {denom} is "
                                      f"{totals.get(denom, 0)}, started at {start.get(denom, 0)}")


def check_backing(view: TraceView) -> None:
    latest: dict[str, dict] = {}

    def compare(rec, final: bool) -> None:
        for (lid, port, chan), (plid, pport, pchan) in view.peer.items():
            if lid not in latest or plid not in latest or plid in view.byzantine:
                continue
            escrow = latest[lid]["escrow"].get(chan, {})
            vouchers = latest[plid]["vouchers"].get(pchan, {})
            prefix = f"{pport}/{pchan}/"
            idle = (not latest[lid]["commitments"].get(chan)
                    and not latest[plid]["commitments"].get(pchan))
            for vdenom, amount in vouchers.items():
                if not vdenom.startswith(prefix):
                    continue
                backing = escrow.get(vdenom[len(prefix):], 0)
                if amount > backing or (final and idle and amount != backing):
                    raise _Violation(rec, f"{plid} has {amount} {vdenom} outstanding but "
                                          f"{lid} escrows {backing} on {chan}")
            if final and idle:
                for denom, amount in escrow.items():
                    if vouchers.get(prefix + denom, 0) != amount:
                        raise _Violation(rec, f"{lid} escrows {amount} {denom} on {chan} but "
                                              f"{plid} has {vouchers.get(prefix + denom, 0)} "
                                              f"vouchers outstanding")

    step = None
    for rec in view.records:
        if rec["kind"] != "Supply":
            continue
        if step is not None and rec["step"] != step:
            compare(rec, final=False)
        step = rec["step"]
        latest[rec["source"]] = rec
    compare(view.end, final=True)


def check_containment(view: TraceView) -> None:
    inflow: dict[tuple, int] = {}
    outflow: dict[tuple, int] = {}
    for rec in view.records:
        kind = rec["kind"]
        if kind not in ("TransferEscrow", "TransferUnescrow", "TransferRefund"):
            continue
        key = (rec["source"], rec["channel"], rec["denom"])
        if kind == "TransferEscrow":
            inflow[key] = inflow.get(key, 0) + rec["amount"]
            continue
        if kind == "TransferRefund" and rec["burned"]:
            continue
        outflow[key] = outflow.get(key, 0) + rec["amount"]
        if outflow[key] > inflow.get(key, 0):
            raise _Violation(rec, f"{key[0]} released {outflow[key]} {key[2]} over {key[1]} "
                                  f"but only {inflow.get(key, 0)} was escrowed there")


def _live_pairs(view: TraceView) -> set[frozenset]:
    paused = set(view.end.get("paused", []))
    return {frozenset(r["between"]) for r in view.relayers
            if r["honest"] and r["id"] not in paused}


def check_liveness(view: TraceView) -> None:
    frozen = {(f["host"], f["id"]) for f in view.end.get("frozen", [])}
    halted = set(view.end.get("halted", []))
    live = _live_pairs(view)
    sent: dict[tuple, dict] = {}
    terminal: set[tuple] = set()
    for rec, key in view.packet_events(("SendPacket", "RecvPacket", "TimeoutPacket")):
        if rec["kind"] == "SendPacket":
            sent[key] = rec
        else:
            terminal.add(key)
    for key, rec in sent.items():
        if key in terminal:
            continue
        here = key[:3]
        there = view.peer[here]
        if here[0] in halted or there[0] in halted:
            continue
        if frozenset((here[0], there[0])) not in live:
            continue
        if (here[0], view.client_of[here]) in frozen or (there[0], view.client_of[there]) in frozen:
            continue
        raise _Violation(rec, f"packet {key} was neither received nor timed out by step "
                              f"{view.end['step']}")


def check_commitments(view: TraceView) -> None:
    outstanding: dict[tuple[str, str], int] = {}
    for rec in view.records:
        kind = rec["kind"]
        if kind == "SendPacket" or kind in FINISH:
            _ledger, port, chan, _seq = view.packet_key(rec)
            k = (rec["source"], chan)
            outstanding[k] = outstanding.get(k, 0) + (1 if kind == "SendPacket" else -1)
        elif kind == "Supply":
            lid = rec["source"]
            chans = {c for (l, c) in outstanding if l == lid} | set(rec["commitments"])
            for chan in sorted(chans):
                stored = rec["commitments"].get(chan, 0)
                if stored != outstanding.get((lid, chan), 0):
                    raise _Violation(rec, f"{lid}/{chan} stores {stored} commitments but "
                                          f"{outstanding.get((lid, chan), 0)} are in flight")


_PROOF_EVENTS = {"RecvPacket", "AcknowledgePacket", "TimeoutPacket", "CleanupPacket",
                 "ConnOpenTry", "ConnOpenAck", "ConnOpenConfirm", "ChanOpenTry", "ChanOpenAck",
                 "ChanOpenConfirm", "ChanCloseConfirm"}


def check_misbehaviour(view: TraceView) -> None:
    frozen: dict[tuple[str, str], int] = {}
    equivocations: list[dict] = []
    live = _live_pairs(view)
    for rec in view.records:
        kind = rec["kind"]
        host = rec["source"]
        if kind == "ClientMisbehaviour":
            if (host, rec["clientId"]) in frozen:
                raise _Violation(rec, f"client {rec['clientId']} on {host} frozen twice")
            frozen[(host, rec["clientId"])] = max(rec["height"], 1)
        elif kind == "UpdateClient" and (host, rec["clientId"]) in frozen:
            raise _Violation(rec, f"frozen client {rec['clientId']} on {host} accepted a header")
        elif kind in _PROOF_EVENTS:
            fh = frozen.get((host, rec.get("clientId")))
            if fh is not None and rec["proofHeight"] >= fh:
                raise _Violation(rec, f"{kind} on {host} verified at {rec['proofHeight']} "
                                      f"through a client frozen at {fh}")
        elif kind == "SendPacket":
            p = rec["packet"]
            cid = view.client_of.get((host, p["sourcePort"], p["sourceChannel"]))
            if (host, cid) in frozen:
                raise _Violation(rec, f"packet sent over frozen client {cid} on {host}")
        elif kind == "Action" and rec.get("action") == "equivocate" and rec.get("ok"):
            equivocations.append(rec)
    # every tracking client reachable by an honest relayer freezes within one relay cycle
    halted = set(view.end.get("halted", []))
    for eq in equivocations:
        if eq["step"] + 1 > view.end["step"]:
            continue
        for (host, cid), tracked in sorted(view.tracks.items()):
            if tracked != eq["ledger"] or host in halted:
                continue
            if frozenset((host, tracked)) not in live:
                continue
            hit = next((r for r in view.records if r["kind"] == "ClientMisbehaviour"
                        and r["source"] == host and r["clientId"] == cid), None)
            if hit is None or hit["step"] > eq["step"] + 1:
                raise _Violation(eq, f"client {cid} on {host} not frozen within one relay "
                                     f"cycle of the equivocation by {tracked}")


_CONN_STEPS = {"ConnOpenInit": (None,), "ConnOpenTry": (None, "INIT"),
               "ConnOpenAck": ("INIT", "TRYOPEN"), "ConnOpenConfirm": ("TRYOPEN",)}
_CONN_AFTER = {"ConnOpenInit": "INIT", "ConnOpenTry": "TRYOPEN", "ConnOpenAck": "OPEN",
               "ConnOpenConfirm": "OPEN"}
_CHAN_STEPS = {"ChanOpenInit": (None,), "ChanOpenTry": (None, "INIT"),
               "ChanOpenAck": ("INIT", "TRYOPEN"), "ChanOpenConfirm": ("TRYOPEN",),
               "ChanCloseInit": ("INIT", "TRYOPEN", "OPEN"),
               "ChanCloseConfirm": ("INIT", "TRYOPEN", "OPEN"),
               "ChanClosedByTimeout": ("OPEN",)}
_CHAN_AFTER = {"ChanOpenInit": "INIT", "ChanOpenTry": "TRYOPEN", "ChanOpenAck": "OPEN",
               "ChanOpenConfirm": "OPEN", "ChanCloseInit": "CLOSED",
               "ChanCloseConfirm": "CLOSED", "ChanClosedByTimeout": "CLOSED"}


def check_handshake(view: TraceView) -> None:
    state: dict[tuple, Optional[str]] = {}
    for rec in view.records:
        kind = rec["kind"]
        if kind in _CONN_STEPS:
            key, allowed, after = (rec["source"], rec["connectionId"]), _CONN_STEPS, _CONN_AFTER
        elif kind in _CHAN_STEPS:
            key, allowed, after = (rec["source"], rec["port"], rec["channel"]), _CHAN_STEPS, _CHAN_AFTER
        else:
            continue
        current = state.get(key)
        if current not in allowed[kind]:
            raise _Violation(rec, f"{kind} on {key} from state {current or 'NONE'}")
        state[key] = after[kind]


CHECK_FUNCS: dict[str, Callable[[TraceView], None]] = {
    "exactly_once": check_exactly_once,
    "deliver_xor_timeout": check_deliver_xor_timeout,
    "ordering": check_ordering,
    "conservation": check_conservation,
    "backing": check_backing,
    "containment": check_containment,
    "liveness": check_liveness,
    "commitments": check_commitments,
    "misbehaviour": check_misbehaviour,
    "handshake": check_handshake,
}


def verify_trace(records: list[dict], checks: Optional[Iterable[str]] = None) -> dict[str, Verdict]:
    """Run the named checks (all by default). Raises MalformedTrace or ValueError."""
    names = list(CHECK_FUNCS) if checks is None else list(checks)
    unknown = [n for n in names if n not in CHECK_FUNCS]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)}")
    view = TraceView(records)
    out: dict[str, Verdict] = {}
    for name in names:
        try:
            CHECK_FUNCS[name](view)
        except _Violation as v:
            out[name] = Verdict(False, v.detail, v.index)
        except (KeyError, TypeError) as e:
            raise MalformedTrace(f"{name}: record missing or mistyped field {e!r}") from None
        else:
            out[name] = Verdict(True)
    return out
