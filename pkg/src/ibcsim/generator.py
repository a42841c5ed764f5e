"""Seeded random scenarios for bulk property runs."""

from __future__ import annotations

import random

from .scenario import Scenario, parse_scenario

_PROBS = (0, 0.1, 0.25, 0.5)
_CORRUPT = (0, 0.05, 0.1, 0.2)


def random_scenario(seed: int, max_ledgers: int = 4) -> Scenario:
    """A 2..max_ledgers topology with faulty relayers, each pair also served honestly."""
    rng = random.Random(seed)
    n = rng.randint(2, max_ledgers)
    ids = [f"L{i}" for i in range(n)]
    ledgers = []
    for i, lid in enumerate(ids):
        solo = rng.random() < 0.2
        ledgers.append({
            "id": lid,
            "signers": 1 if solo else rng.choice((1, 3, 4, 7)),
            "clientType": "solo" if solo else "quorum",
            "blockTimeStep": rng.randint(1, 6),
            "trustingPeriod": 1_000_000,
            "accounts": {"u0": {f"tok{i}": 10**6}, "u1": {f"tok{i}": 10**6, "gold": 500}},
        })
    pairs = [(ids[i], ids[i + 1]) for i in range(n - 1)]
    if n > 2 and rng.random() < 0.5:
        pairs.append((ids[0], ids[-1]))
    connections, channels, relayers = [], [], []
    for k, (a, b) in enumerate(pairs):
        cid = f"conn-{k}"
        if rng.random() < 0.5:
            a, b = b, a
        connections.append({"id": cid, "a": a, "b": b})
        for j in range(rng.randint(1, 2)):
            channels.append({"id": f"ch-{k}-{j}", "connection": cid,
                             "ordering": rng.choice(("ordered", "unordered"))})
        relayers.append({"id": f"honest-{k}", "between": [a, b],
                         "mode": rng.choice(("event", "query")),
                         "pollEvery": rng.choice((1, 1, 2)), "bundle": rng.random() < 0.3})
        for f in range(rng.randint(0, 2)):
            relayers.append({"id": f"faulty-{k}-{f}", "between": [b, a],
                             "mode": rng.choice(("event", "query")),
                             "bundle": rng.random() < 0.5,
                             "faults": {"drop": rng.choice(_PROBS), "dup": rng.choice(_PROBS),
                                        "reorder": rng.choice(_PROBS),
                                        "corrupt": rng.choice(_CORRUPT),
                                        "seed": rng.getrandbits(32)}})
    ends = {}
    for ch in channels:
        conn = next(c for c in connections if c["id"] == ch["connection"])
        ends[ch["id"]] = (conn["a"], conn["b"])
    actions = []
    halted_until: dict[str, int] = {}
    steps = sorted(rng.randint(0, 24) for _ in range(rng.randint(4, 14)))
    for step in steps:
        roll = rng.random()
        chan = rng.choice(channels)["id"]
        src, dst = ends[chan] if rng.random() < 0.5 else ends[chan][::-1]
        if roll < 0.08 and halted_until.get(dst, -1) < step:
            actions.append({"step": step, "kind": "haltLedger", "ledger": dst})
            actions.append({"step": step + rng.randint(1, 6), "kind": "resumeLedger", "ledger": dst})
            halted_until[dst] = actions[-1]["step"]
            continue
        if roll < 0.12:
            actions.append({"step": step, "kind": "closeChannel", "channel": chan, "ledger": src})
            continue
        si, di = ids.index(src), ids.index(dst)
        if rng.random() < 0.25:
            # send vouchers back to where they came from (may lack balance; that is fine)
            denom, sender = f"transfer/{chan}/tok{di}", rng.choice(("u0", "u1"))
        else:
            denom, sender = rng.choice((f"tok{si}", "gold")), rng.choice(("u0", "u1"))
        receiver = rng.choice(("u0", "u1", "u1", "nobody"))
        timeout = rng.choice(((0, 0), (3, 0), (8, 0), (40, 0), (0, 30), (0, 200), (6, 60)))
        actions.append({"step": step, "kind": "transfer", "channel": chan, "from": src,
                        "denom": denom, "amount": rng.randint(1, 5000), "sender": sender,
                        "receiver": receiver, "timeoutBlocks": timeout[0],
                        "timeoutSeconds": timeout[1]})
    actions.sort(key=lambda a: a["step"])
    return parse_scenario({"seed": seed, "maxSteps": 240, "ledgers": ledgers,
                           "connections": connections, "channels": channels,
                           "relayers": relayers, "actions": actions})
