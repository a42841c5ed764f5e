"""Scenario documents: the topology, relayers, timed actions and checks of one run.

A scenario is a YAML (or JSON) mapping with camelCase keys; see
``docs/scenario-format.md`` for the full schema.
"""

from __future__ import annotations

import re
from fractions import Fraction
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic.alias_generators import to_camel

from .checks import CHECK_FUNCS
from .errors import ScenarioInvalid
from .transfer import UINT256_MAX

CHECKS = tuple(CHECK_FUNCS)

_IDENT = re.compile(r"[a-z0-9-]{1,64}")
_LEDGER = re.compile(r"[A-Za-z0-9-]{1,64}")


class _Model(BaseModel):
    model_config = ConfigDict(alias_generator=to_camel, populate_by_name=True, extra="forbid",
                              frozen=True)


Probability = Union[float, int, str]


def _probability(v) -> Fraction:
    try:
        p = Fraction(str(v)) if isinstance(v, float) else Fraction(v)
    except (ValueError, ZeroDivisionError, TypeError) as e:
        raise ValueError(f"not a probability: {v!r}") from e
    if not 0 <= p <= 1:
        raise ValueError("probability must lie in [0, 1]")
    return p


class FaultSpec(_Model):
    drop: Probability = 0
    dup: Probability = 0
    reorder: Probability = 0
    corrupt: Probability = 0
    seed: int = Field(0, ge=0, lt=2**64)

    @field_validator("drop", "dup", "reorder", "corrupt")
    @classmethod
    def _check(cls, v):
        _probability(v)
        return v

    def fractions(self) -> dict[str, Fraction]:
        return {k: _probability(getattr(self, k)) for k in ("drop", "dup", "reorder", "corrupt")}

    @property
    def honest(self) -> bool:
        return not any(self.fractions().values())


class LedgerSpec(_Model):
    id: str
    signers: int = Field(4, ge=1, le=100)
    block_time_step: int = Field(1, ge=0)
    client_type: Literal["quorum", "solo"] = "quorum"
    genesis_time: int = Field(1_700_000_000, ge=0, lt=2**63)
    trusting_period: Optional[int] = Field(None, gt=0)
    accounts: dict[str, dict[str, int]] = {}


class ClientSpec(_Model):
    id: str
    host: str
    tracks: str


class ConnectionSpec(_Model):
    id: str
    a: str
    b: str
    client_a: Optional[str] = None
    client_b: Optional[str] = None


class ChannelSpec(_Model):
    id: str
    connection: str
    ordering: Literal["ordered", "unordered"] = "unordered"


class RelayerSpec(_Model):
    id: str
    between: tuple[str, str]
    mode: Literal["event", "query"] = "event"
    poll_every: int = Field(1, ge=1)
    bundle: bool = False
    faults: FaultSpec = FaultSpec()


class _Action(_Model):
    step: int = Field(ge=0)


class TransferAction(_Action):
    kind: Literal["transfer"]
    channel: str
    source: str = Field(alias="from")
    denom: str
    amount: int = Field(gt=0)
    sender: str
    receiver: str
    timeout_blocks: int = Field(0, ge=0)
    timeout_seconds: int = Field(0, ge=0)


class LedgerAction(_Action):
    kind: Literal["haltLedger", "resumeLedger", "equivocate"]
    ledger: str


class CloseChannelAction(_Action):
    kind: Literal["closeChannel"]
    channel: str
    ledger: str


class ByzantineMintAction(_Action):
    kind: Literal["byzantineMint"]
    ledger: str
    account: str
    denom: str
    amount: int = Field(gt=0)


class RelayerAction(_Action):
    kind: Literal["pauseRelayer", "resumeRelayer"]
    relayer: str


Action = Annotated[
    Union[TransferAction, LedgerAction, CloseChannelAction, ByzantineMintAction, RelayerAction],
    Field(discriminator="kind"),
]


class Scenario(_Model):
    seed: int = Field(0, ge=0, lt=2**64)
    max_steps: int = Field(200, ge=1)
    setup_max_steps: int = Field(60, ge=1)
    ledgers: list[LedgerSpec] = Field(min_length=1)
    clients: list[ClientSpec] = []
    connections: list[ConnectionSpec] = []
    channels: list[ChannelSpec] = []
    relayers: list[RelayerSpec] = []
    actions: list[Action] = []
    checks: list[str] = list(CHECKS)

    def ledger(self, ledger_id: str) -> LedgerSpec:
        return next(l for l in self.ledgers if l.id == ledger_id)

    def connection(self, conn_id: str) -> ConnectionSpec:
        return next(c for c in self.connections if c.id == conn_id)

    def channel(self, chan_id: str) -> ChannelSpec:
        return next(c for c in self.channels if c.id == chan_id)

    def client_for(self, host: str, tracks: str, explicit: Optional[str] = None) -> str:
        if explicit:
            return explicit
        for c in self.clients:
            if c.host == host and c.tracks == tracks:
                return c.id
        return f"client-{tracks.lower()}"

    def channel_ends(self, chan_id: str) -> tuple[tuple[str, str], tuple[str, str]]:
        """((ledgerA, connection), (ledgerB, connection)) for a channel."""
        conn = self.connection(self.channel(chan_id).connection)
        return (conn.a, conn.id), (conn.b, conn.id)

    def byzantine_ledgers(self) -> list[str]:
        return sorted({a.ledger for a in self.actions if a.kind == "byzantineMint"})


# -- validation of cross references ---------------------------------------------------

def _unique(ids, where: str, fold=False) -> None:
    seen = set()
    for i, ident in enumerate(ids):
        key = ident.lower() if fold else ident
        if key in seen:
            raise ScenarioInvalid(f"duplicate id {ident!r}", f"{where}[{i}]")
        seen.add(key)


def _ident(value: str, where: str) -> None:
    if not _IDENT.fullmatch(value):
        raise ScenarioInvalid(f"{value!r} must match [a-z0-9-]{{1,64}}", where)


def check_references(s: Scenario) -> None:
    ledgers = {l.id for l in s.ledgers}
    for i, l in enumerate(s.ledgers):
        if not _LEDGER.fullmatch(l.id):
            raise ScenarioInvalid(f"ledger id {l.id!r} must match [A-Za-z0-9-]{{1,64}}",
                                  f"ledgers[{i}].id")
        for account, coins in l.accounts.items():
            for denom, amount in coins.items():
                where = f"ledgers[{i}].accounts.{account}.{denom}"
                if not denom or "/" in denom:
                    raise ScenarioInvalid("genesis denominations must be base denominations", where)
                if not 0 <= amount <= UINT256_MAX:
                    raise ScenarioInvalid("amount out of range", where)
    _unique([l.id for l in s.ledgers], "ledgers", fold=True)

    for i, c in enumerate(s.clients):
        _ident(c.id, f"clients[{i}].id")
        for side in ("host", "tracks"):
            if getattr(c, side) not in ledgers:
                raise ScenarioInvalid(f"unknown ledger {getattr(c, side)!r}", f"clients[{i}].{side}")
        if c.host == c.tracks:
            raise ScenarioInvalid("a client must track another ledger", f"clients[{i}]")
    _unique([(c.host, c.id) for c in s.clients], "clients")

    _unique([c.id for c in s.connections], "connections")
    for i, c in enumerate(s.connections):
        _ident(c.id, f"connections[{i}].id")
        for side in ("a", "b"):
            if getattr(c, side) not in ledgers:
                raise ScenarioInvalid(f"unknown ledger {getattr(c, side)!r}", f"connections[{i}].{side}")
        if c.a == c.b:
            raise ScenarioInvalid("connection ends must be on different ledgers", f"connections[{i}]")
        for side in ("client_a", "client_b"):
            if getattr(c, side):
                _ident(getattr(c, side), f"connections[{i}].{to_camel(side)}")
    # the same client id on one host must always track the same ledger
    tracked: dict[tuple[str, str], str] = {}
    for i, c in enumerate(s.connections):
        for host, other, explicit in ((c.a, c.b, c.client_a), (c.b, c.a, c.client_b)):
            cid = s.client_for(host, other, explicit)
            if tracked.setdefault((host, cid), other) != other:
                raise ScenarioInvalid(f"client {cid!r} on {host} tracks two ledgers",
                                      f"connections[{i}]")

    conns = {c.id for c in s.connections}
    _unique([c.id for c in s.channels], "channels")
    for i, c in enumerate(s.channels):
        _ident(c.id, f"channels[{i}].id")
        if c.connection not in conns:
            raise ScenarioInvalid(f"unknown connection {c.connection!r}", f"channels[{i}].connection")

    _unique([r.id for r in s.relayers], "relayers")
    for i, r in enumerate(s.relayers):
        for ledger in r.between:
            if ledger not in ledgers:
                raise ScenarioInvalid(f"unknown ledger {ledger!r}", f"relayers[{i}].between")
        if r.between[0] == r.between[1]:
            raise ScenarioInvalid("a relayer needs two distinct ledgers", f"relayers[{i}].between")

    chans = {c.id for c in s.channels}
    relayers = {r.id for r in s.relayers}
    last = 0
    for i, a in enumerate(s.actions):
        where = f"actions[{i}]"
        if a.step < last:
            raise ScenarioInvalid("actions must be sorted by step", f"{where}.step")
        last = a.step
        if hasattr(a, "ledger") and a.ledger not in ledgers:
            raise ScenarioInvalid(f"unknown ledger {a.ledger!r}", f"{where}.ledger")
        if hasattr(a, "relayer") and a.relayer not in relayers:
            raise ScenarioInvalid(f"unknown relayer {a.relayer!r}", f"{where}.relayer")
        if hasattr(a, "channel"):
            if a.channel not in chans:
                raise ScenarioInvalid(f"unknown channel {a.channel!r}", f"{where}.channel")
            ends = [e[0] for e in s.channel_ends(a.channel)]
            end = a.source if a.kind == "transfer" else a.ledger
            if end not in ends:
                field = "from" if a.kind == "transfer" else "ledger"
                raise ScenarioInvalid(f"{end!r} is not an end of channel {a.channel!r}",
                                      f"{where}.{field}")
        if a.kind == "byzantineMint" and "/" not in a.denom:
            raise ScenarioInvalid("only voucher denominations can be minted", f"{where}.denom")

    for i, name in enumerate(s.checks):
        if name not in CHECKS:
            raise ScenarioInvalid(f"unknown check {name!r}; known: {', '.join(CHECKS)}",
                                  f"checks[{i}]")


def parse_scenario(data) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioInvalid("scenario must be a mapping", "<root>")
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise ScenarioInvalid(err["msg"], loc) from None
    check_references(scenario)
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioInvalid(str(e), str(path)) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioInvalid(f"not YAML/JSON: {e}", str(path)) from None
    return parse_scenario(data)


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(s.model_dump(by_alias=True, exclude_defaults=True), sort_keys=False)
