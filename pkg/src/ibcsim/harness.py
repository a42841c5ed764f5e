"""Deterministic scenario runner.

Each tick fires the actions due at that tick, produces one block on every
ledger, then lets every relayer run once. Everything observable goes into an
ordered list of trace records, and the verdicts come from checking that trace,
so a run and an offline ``verify`` of its trace agree by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path
from typing import Any, Optional

from pydantic.alias_generators import to_camel

from .channel import ChanState, Order, Packet, find_channel
from .checks import Verdict, verify_trace
from .client import get_client_state
from .connection import ConnState, find_connection
from .datagrams import ClientCreate, ConnOpenInit
from .errors import IBCError, MalformedTrace, ScenarioInvalid
from .ledger import Ledger
from .relayer import FaultProfile, Relayer
from .scenario import Scenario
from .transfer import PORT, VERSION, TransferModule


def _jsonable(value: Any) -> Any:
    if isinstance(value, Packet):
        return {"sequence": value.sequence, "sourcePort": value.source_port,
                "sourceChannel": value.source_channel, "destPort": value.dest_port,
                "destChannel": value.dest_channel, "timeoutHeight": value.timeout_height,
                "timeoutTimestamp": value.timeout_timestamp, "data": value.data.hex()}
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if hasattr(value, "name") and isinstance(value, int):
        return value.name
    return value


def _derive_seed(*parts) -> int:
    return int.from_bytes(sha256(repr(parts).encode()).digest()[:8], "big")


@dataclass
class RunResult:
    trace: list[dict]
    verdicts: dict[str, Verdict]

    @property
    def ok(self) -> bool:
        return all(v.ok for v in self.verdicts.values())


class Simulation:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None,
                 max_steps: Optional[int] = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        if not 0 <= self.seed < 2**64:
            raise ScenarioInvalid("seed must be a u64", "seed")
        self.max_steps = scenario.max_steps if max_steps is None else max_steps
        if self.max_steps < 1:
            raise ScenarioInvalid("must be at least 1", "maxSteps")
        self.trace: list[dict] = []
        self.tick = 0
        self.ledgers: dict[str, Ledger] = {}
        self.modules: dict[str, TransferModule] = {}
        for spec in scenario.ledgers:
            ledger = Ledger(spec.id, spec.signers, spec.block_time_step, spec.genesis_time,
                            spec.client_type, seed=self.seed)
            module = TransferModule()
            ledger.router.register_module(PORT, module)
            for account, coins in spec.accounts.items():
                module.register_account(account)
                for denom, amount in coins.items():
                    if amount:
                        module.mint_genesis(account, denom, amount)
            self.ledgers[spec.id] = ledger
            self.modules[spec.id] = module
        self.relayers: dict[str, Relayer] = {}
        for spec in scenario.relayers:
            f = spec.faults
            profile = FaultProfile(**f.fractions(), seed=_derive_seed(self.seed, f.seed, spec.id))
            self.relayers[spec.id] = Relayer(spec.id, self.ledgers[spec.between[0]],
                                             self.ledgers[spec.between[1]], spec.mode,
                                             spec.poll_every, profile, spec.bundle)
        self._client_ids = self._plan_clients()

    # -- trace ---------------------------------------------------------------------
    def record(self, source: str, kind: str, **payload) -> None:
        rec = {to_camel(k): _jsonable(v) for k, v in payload.items()}
        rec.update(i=len(self.trace), step=self.tick, source=source, kind=kind)
        self.trace.append(rec)

    def _plan_clients(self) -> dict[tuple[str, str], str]:
        """(host, tracked) -> client id, for every connection end."""
        s = self.scenario
        out: dict[tuple[str, str], str] = {}
        for c in s.connections:
            out.setdefault((c.a, c.b), s.client_for(c.a, c.b, c.client_a))
            out.setdefault((c.b, c.a), s.client_for(c.b, c.a, c.client_b))
        for c in s.clients:
            out.setdefault((c.host, c.tracks), c.id)
        return out

    def _channel_ends(self, chan_id: str) -> list[dict]:
        conn = self.scenario.connection(self.scenario.channel(chan_id).connection)
        return [{"ledger": host, "port": PORT, "channel": chan_id, "connection": conn.id,
                 "client": self._client_ids[(host, other)]}
                for host, other in ((conn.a, conn.b), (conn.b, conn.a))]

    def _begin(self) -> None:
        s = self.scenario
        self.record("harness", "Begin", seed=self.seed, max_steps=self.max_steps,
                    ledgers=[{"id": l.id, "signers": len(self.ledgers[l.id].signer_keys),
                              "blockTimeStep": l.block_time_step, "clientType": l.client_type,
                              "genesisTime": l.genesis_time} for l in s.ledgers],
                    accounts={l.id: self.modules[l.id].accounts_by_owner() for l in s.ledgers},
                    clients=[{"host": h, "tracks": t, "id": cid}
                             for (h, t), cid in sorted(self._client_ids.items())],
                    channels=[{"id": c.id, "ordering": c.ordering.upper(),
                               "ends": self._channel_ends(c.id)} for c in s.channels],
                    relayers=[{"id": r.id, "between": list(r.between), "mode": r.mode,
                               "pollEvery": r.poll_every, "bundle": r.bundle,
                               "honest": r.faults.honest} for r in s.relayers],
                    byzantine=s.byzantine_ledgers(), checks=list(s.checks))

    def _supply(self, ledger: Ledger) -> None:
        module = self.modules[ledger.id]
        balances: dict[str, int] = {}
        for (_account, denom), amount in module.accounts().items():
            balances[denom] = balances.get(denom, 0) + amount
        escrow: dict[str, dict[str, int]] = {}
        for (chan, denom), amount in module.escrows().items():
            escrow.setdefault(chan, {})[denom] = amount
        vouchers: dict[str, dict[str, int]] = {}
        for (chan, denom), amount in module.outstanding_vouchers().items():
            vouchers.setdefault(chan, {})[denom] = amount
        commitments: dict[str, int] = {}
        for key, _value in ledger.ibc_items(f"commitments/ports/{PORT}/channels/"):
            chan = key.split("/")[5]
            commitments[chan] = commitments.get(chan, 0) + 1
        self.record(ledger.id, "Supply", height=ledger.height, halted=ledger.halted,
                    balances=dict(sorted(balances.items())), escrow=escrow, vouchers=vouchers,
                    commitments=commitments)

    # -- one tick --------------------------------------------------------------------
    def _blocks(self) -> None:
        for ledger in self.ledgers.values():
            block = ledger.produce_block()
            if block is None:
                continue
            for ev in ledger.events[block.height]:
                self.record(ledger.id, ev.kind, block_height=ev.height, **ev.attrs)
            self._supply(ledger)

    def _relay(self) -> int:
        submitted = 0
        for relayer in self.relayers.values():
            report = relayer.relay_once()
            for e in report.entries:
                self.record(relayer.id, "Submission", datagram=e.kind, target=e.target, ok=e.ok,
                            reason=e.reason)
            submitted += len(report.entries)
        return submitted

    def _tick(self, actions=()) -> int:
        for action in actions:
            self._fire(action)
        self._blocks()
        submitted = self._relay()
        self.tick += 1
        return submitted

    # -- setup -----------------------------------------------------------------------
    def _setup(self) -> None:
        s = self.scenario
        for ledger in self.ledgers.values():
            ledger.produce_block()
        for (host, tracked), cid in sorted(self._client_ids.items()):
            target = self.ledgers[tracked]
            spec = s.ledger(tracked)
            cs = target.client_state_for_counterparty(spec.trusting_period)
            consensus = target.own_consensus_state(target.height).encode()
            self._submit_setup(host, ClientCreate(cid, cs, consensus))
        for c in s.connections:
            self._submit_setup(c.a, ConnOpenInit(c.id, c.id, "ibc", self._client_ids[(c.a, c.b)],
                                                 self._client_ids[(c.b, c.a)]))
        started: set[str] = set()
        for _ in range(s.setup_max_steps):
            if self._setup_done():
                break
            for chan in s.channels:
                conn = s.connection(chan.connection)
                end = find_connection(self.ledgers[conn.a], conn.id)
                if chan.id not in started and end is not None and end.state == ConnState.OPEN:
                    ctx = self.ledgers[conn.a].router.modules[PORT][1]
                    order = Order.ORDERED if chan.ordering == "ordered" else Order.UNORDERED
                    with self.ledgers[conn.a].transaction():
                        ctx.chan_open_init(order, conn.id, chan.id, PORT, chan.id, VERSION)
                    started.add(chan.id)
            self._tick()
        if not self._setup_done():
            raise ScenarioInvalid(f"handshakes did not finish within {s.setup_max_steps} steps",
                                  "setupMaxSteps")
        self.record("harness", "SetupComplete")

    def _submit_setup(self, host: str, datagram) -> None:
        res = self.ledgers[host].submit([datagram])
        if not res.ok:
            raise ScenarioInvalid(f"{datagram.kind.name} failed on {host}: {res.reason}", "setup")

    def _setup_done(self) -> bool:
        s = self.scenario
        for c in s.connections:
            for host in (c.a, c.b):
                end = find_connection(self.ledgers[host], c.id)
                if end is None or end.state != ConnState.OPEN:
                    return False
        for chan in s.channels:
            conn = s.connection(chan.connection)
            for host in (conn.a, conn.b):
                end = find_channel(self.ledgers[host], PORT, chan.id)
                if end is None or end.state != ChanState.OPEN:
                    return False
        return True

    # -- actions ---------------------------------------------------------------------
    def _fire(self, a) -> None:
        detail: dict[str, Any] = {}
        try:
            if a.kind == "transfer":
                detail = self._transfer(a)
            elif a.kind == "haltLedger":
                self.ledgers[a.ledger].halt()
            elif a.kind == "resumeLedger":
                ledger = self.ledgers[a.ledger]
                spec = self.scenario.ledger(a.ledger)
                ledger.resume(spec.genesis_time + (self.tick + 1) * spec.block_time_step)
            elif a.kind == "equivocate":
                fork = self.ledgers[a.ledger].equivocate()
                detail = {"height": fork.block.height}
            elif a.kind == "closeChannel":
                ledger = self.ledgers[a.ledger]
                if ledger.halted:
                    raise IBCError(f"{ledger.id} is halted")
                with ledger.transaction():
                    ledger.router.modules[PORT][1].close_channel(a.channel)
            elif a.kind == "byzantineMint":
                ledger = self.ledgers[a.ledger]
                with ledger.transaction():
                    self.modules[a.ledger].byzantine_mint(a.account, a.denom, a.amount)
            elif a.kind == "pauseRelayer":
                self.relayers[a.relayer].paused = True
            elif a.kind == "resumeRelayer":
                self.relayers[a.relayer].paused = False
        except (IBCError, ValueError) as e:
            self.record("harness", "Action", action=a.kind, ok=False, reason=type(e).__name__,
                        **self._action_fields(a))
            return
        self.record("harness", "Action", action=a.kind, ok=True, **self._action_fields(a),
                    **detail)

    @staticmethod
    def _action_fields(a) -> dict:
        return a.model_dump(exclude={"kind", "step"}, by_alias=True)

    def _transfer(self, a) -> dict:
        (l1, _), (l2, _) = self.scenario.channel_ends(a.channel)
        dest = self.ledgers[l2 if a.source == l1 else l1]
        th = dest.height + a.timeout_blocks if a.timeout_blocks else 0
        tt = dest.current_timestamp + a.timeout_seconds if a.timeout_seconds else 0
        seq = self.modules[a.source].send_transfer(a.denom, a.amount, a.sender, a.receiver,
                                                   a.channel, th, tt)
        return {"sequence": seq, "timeoutHeight": th, "timeoutTimestamp": tt}

    # -- driver ----------------------------------------------------------------------
    def _quiescent(self) -> bool:
        for ledger in self.ledgers.values():
            if next(iter(ledger.ibc_items("commitments/")), None) is not None:
                return False
        return True

    def run(self) -> RunResult:
        self._begin()
        self._setup()
        start = self.tick
        pending = list(self.scenario.actions)
        quiet_needed = max([r.poll_every for r in self.scenario.relayers] or [1]) + 1
        quiet = 0
        for _ in range(self.max_steps):
            due = [a for a in pending if start + a.step <= self.tick]
            pending = pending[len(due):]
            submitted = self._tick(due)
            quiet = quiet + 1 if not submitted and not pending and self._quiescent() else 0
            if quiet >= quiet_needed:
                break
        # commit whatever the last relay round executed
        self._blocks()
        self._end()
        return RunResult(self.trace, verify_trace(self.trace, self.scenario.checks))

    def _end(self) -> None:
        frozen = []
        for (host, _tracked), cid in sorted(self._client_ids.items()):
            cs = get_client_state(self.ledgers[host], cid)
            if cs.frozen:
                frozen.append({"host": host, "id": cid, "height": cs.frozen_height})
        self.record("harness", "End", steps=self.tick,
                    halted=sorted(l.id for l in self.ledgers.values() if l.halted),
                    paused=sorted(r.id for r in self.relayers.values() if r.paused),
                    frozen=frozen,
                    accounts={lid: m.accounts_by_owner() for lid, m in self.modules.items()})


def run_scenario(scenario: Scenario, seed: Optional[int] = None,
                 max_steps: Optional[int] = None) -> RunResult:
    return Simulation(scenario, seed, max_steps).run()


# -- trace files -------------------------------------------------------------------------

def dumps_trace(trace: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in trace)


def write_trace(trace: list[dict], path: str | Path) -> None:
    Path(path).write_text(dumps_trace(trace), encoding="utf-8")


def read_trace(path: str | Path) -> list[dict]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise MalformedTrace(str(e)) from None
    out = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedTrace(f"line {n}: {e}") from None
        if not isinstance(rec, dict):
            raise MalformedTrace(f"line {n}: record is not an object")
        out.append(rec)
    return out
