"""Versioned key/value store with a sorted-key Merkle commitment.

Leaves are ordered by key. A leaf hashes ``0x00 || u32(len(key)) || key || value``
and an inner node hashes ``0x01 || left || right``; at each level an unpaired
last node is promoted unchanged. The empty map commits to ``H(0x02)``.

Absence of a key is proven by the membership proofs of its two sorted
neighbours (or a single neighbour at either edge).
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .encoding import Encodable, DecodeError, sha256, u32
from .errors import HeightPruned, InvalidKey, KeyAbsent, KeyPresent, ValueTooLarge

EMPTY_ROOT = sha256(b"\x02")
MAX_KEY_BYTES = 512
MAX_VALUE_BYTES = 64 * 1024
DEFAULT_RETENTION = 256

_LEAF = b"\x00"
_INNER = b"\x01"


def validate_key(key: str) -> bytes:
    if not isinstance(key, str) or not key:
        raise InvalidKey("key must be a non-empty string")
    raw = key.encode("utf-8")
    if len(raw) > MAX_KEY_BYTES:
        raise InvalidKey(f"key longer than {MAX_KEY_BYTES} bytes")
    if "" in key.split("/"):
        raise InvalidKey(f"empty path segment in {key!r}")
    return raw


def leaf_hash(key: str, value: bytes) -> bytes:
    raw = key.encode("utf-8")
    return sha256(_LEAF, u32(len(raw)), raw, value)


def inner_hash(left: bytes, right: bytes) -> bytes:
    return sha256(_INNER, left, right)


class Side(enum.IntEnum):
    """Which side of the running hash the sibling sits on."""
    LEFT = 0
    RIGHT = 1


class ProofKind(enum.IntEnum):
    MEMBERSHIP = 0
    NON_MEMBERSHIP = 1


@dataclass(frozen=True)
class ProofStep(Encodable):
    sibling: bytes
    side: Side


@dataclass(frozen=True)
class ExistenceProof(Encodable):
    key: str
    value: bytes
    path: tuple[ProofStep, ...]

    def fold(self) -> list[bytes]:
        """Running hashes: ``out[i]`` is the node hash before step ``i``."""
        h = leaf_hash(self.key, self.value)
        out = [h]
        for step in self.path:
            if len(step.sibling) != 32:
                raise ValueError("bad sibling length")
            h = inner_hash(step.sibling, h) if step.side == Side.LEFT else inner_hash(h, step.sibling)
            out.append(h)
        return out


@dataclass(frozen=True)
class CommitmentProof(Encodable):
    kind: ProofKind
    key: str
    value: bytes
    path: tuple[ProofStep, ...] = ()
    left: Optional[ExistenceProof] = None
    right: Optional[ExistenceProof] = None


# -- verification ----------------------------------------------------------------

def _first_other(path: tuple[ProofStep, ...], side: Side) -> int:
    for i, step in enumerate(path):
        if step.side != side:
            return i
    return -1


def _adjacent(left: ExistenceProof, right: ExistenceProof, lh: list[bytes], rh: list[bytes]) -> bool:
    # Below their common ancestor the left leaf is rightmost in its subtree
    # (all siblings on the left) and the right leaf is leftmost.
    p = _first_other(left.path, Side.LEFT)
    q = _first_other(right.path, Side.RIGHT)
    if p < 0 or q < 0:
        return False
    if left.path[p].side != Side.RIGHT or right.path[q].side != Side.LEFT:
        return False
    return left.path[p].sibling == rh[q] and right.path[q].sibling == lh[p]


def _check(root: bytes, proof: CommitmentProof) -> bool:
    validate_key(proof.key)
    if proof.kind == ProofKind.MEMBERSHIP:
        if proof.left is not None or proof.right is not None:
            return False
        ex = ExistenceProof(proof.key, proof.value, proof.path)
        return ex.fold()[-1] == root
    if proof.value or proof.path:
        return False
    left, right = proof.left, proof.right
    if left is None and right is None:
        return root == EMPTY_ROOT
    lh = rh = None
    if left is not None:
        if not left.key < proof.key:
            return False
        lh = left.fold()
        if lh[-1] != root:
            return False
    if right is not None:
        if not proof.key < right.key:
            return False
        rh = right.fold()
        if rh[-1] != root:
            return False
    if left is None:
        return all(s.side == Side.RIGHT for s in right.path)
    if right is None:
        return all(s.side == Side.LEFT for s in left.path)
    return _adjacent(left, right, lh, rh)


def verify_proof(root: bytes, proof: CommitmentProof) -> bool:
    """True iff ``proof`` is consistent with ``root``. Never raises."""
    try:
        return _check(root, proof)
    except Exception:
        return False


def verify_membership(root: bytes, key: str, value: bytes, proof: CommitmentProof) -> bool:
    return (isinstance(proof, CommitmentProof) and proof.kind == ProofKind.MEMBERSHIP
            and proof.key == key and proof.value == value and verify_proof(root, proof))


def verify_non_membership(root: bytes, key: str, proof: CommitmentProof) -> bool:
    return (isinstance(proof, CommitmentProof) and proof.kind == ProofKind.NON_MEMBERSHIP
            and proof.key == key and verify_proof(root, proof))


def decode_proof(data: bytes) -> CommitmentProof | None:
    try:
        return CommitmentProof.decode(data)
    except (DecodeError, ValueError):
        return None


# -- tree construction -------------------------------------------------------------

_inner_cache: dict[tuple[bytes, bytes], bytes] = {}
_leaf_cache: dict[tuple[str, bytes], bytes] = {}
_CACHE_LIMIT = 200_000


def _cached_leaf(key: str, value: bytes) -> bytes:
    k = (key, value)
    h = _leaf_cache.get(k)
    if h is None:
        if len(_leaf_cache) > _CACHE_LIMIT:
            _leaf_cache.clear()
        h = _leaf_cache[k] = leaf_hash(key, value)
    return h


def _cached_inner(left: bytes, right: bytes) -> bytes:
    k = (left, right)
    h = _inner_cache.get(k)
    if h is None:
        if len(_inner_cache) > _CACHE_LIMIT:
            _inner_cache.clear()
        h = _inner_cache[k] = inner_hash(left, right)
    return h


def build_levels(leaves: list[bytes]) -> list[list[bytes]]:
    levels = [leaves]
    cur = leaves
    while len(cur) > 1:
        nxt = [_cached_inner(cur[i], cur[i + 1]) for i in range(0, len(cur) - 1, 2)]
        if len(cur) % 2:
            nxt.append(cur[-1])
        levels.append(nxt)
        cur = nxt
    return levels


def compute_root(items: dict[str, bytes]) -> bytes:
    """Root of a map, computed from scratch without caches."""
    keys = sorted(items)
    if not keys:
        return EMPTY_ROOT
    cur = [leaf_hash(k, items[k]) for k in keys]
    while len(cur) > 1:
        nxt = [inner_hash(cur[i], cur[i + 1]) for i in range(0, len(cur) - 1, 2)]
        if len(cur) % 2:
            nxt.append(cur[-1])
        cur = nxt
    return cur[0]


@dataclass
class Snapshot:
    height: int
    items: dict[str, bytes]
    keys: list[str]
    levels: list[list[bytes]] = field(repr=False)

    @classmethod
    def build(cls, height: int, items: dict[str, bytes]) -> "Snapshot":
        keys = sorted(items)
        leaves = [_cached_leaf(k, items[k]) for k in keys]
        return cls(height, items, keys, build_levels(leaves) if keys else [])

    @property
    def root(self) -> bytes:
        return self.levels[-1][0] if self.keys else EMPTY_ROOT

    def existence(self, index: int) -> ExistenceProof:
        path = []
        i = index
        for level in self.levels[:-1]:
            if i % 2:
                path.append(ProofStep(level[i - 1], Side.LEFT))
            elif i + 1 < len(level):
                path.append(ProofStep(level[i + 1], Side.RIGHT))
            i //= 2
        key = self.keys[index]
        return ExistenceProof(key, self.items[key], tuple(path))


_MISSING = object()


class ProvableStore:
    """Single-writer store; pending writes become a new height on :meth:`commit`."""

    def __init__(self, retention: int = DEFAULT_RETENTION):
        if retention < 1:
            raise ValueError("retention must be positive")
        self.retention = retention
        self._working: dict[str, bytes] = {}
        self._dirty = False
        self._journals: list[dict[str, object]] = []
        genesis = Snapshot.build(0, {})
        self._snapshots: dict[int, Snapshot] = {0: genesis}
        self.height = 0

    # reads / writes
    def get(self, key: str) -> bytes | None:
        validate_key(key)
        return self._working.get(key)

    def has(self, key: str) -> bool:
        return self.get(key) is not None

    def set(self, key: str, value: bytes) -> None:
        validate_key(key)
        if not isinstance(value, (bytes, bytearray)):
            raise TypeError("value must be bytes")
        if len(value) > MAX_VALUE_BYTES:
            raise ValueTooLarge(f"value of {len(value)} bytes exceeds limit")
        self._record(key)
        self._working[key] = bytes(value)
        self._dirty = True

    def delete(self, key: str) -> None:
        validate_key(key)
        if key in self._working:
            self._record(key)
            del self._working[key]
            self._dirty = True

    def items(self, prefix: str = "") -> Iterator[tuple[str, bytes]]:
        for k in sorted(k for k in self._working if k.startswith(prefix)):
            yield k, self._working[k]

    # transactions
    def _record(self, key: str) -> None:
        if self._journals:
            journal = self._journals[-1]
            if key not in journal:
                journal[key] = self._working.get(key, _MISSING)

    def begin(self) -> None:
        self._journals.append({})

    def rollback(self) -> None:
        journal = self._journals.pop()
        for key, old in journal.items():
            if old is _MISSING:
                self._working.pop(key, None)
            else:
                self._working[key] = old
        self._dirty = True

    def release(self) -> None:
        journal = self._journals.pop()
        if self._journals:
            parent = self._journals[-1]
            for key, old in journal.items():
                parent.setdefault(key, old)

    # commitment
    def commit(self) -> bytes:
        prev = self._snapshots[self.height]
        self.height += 1
        if self._dirty and self._working != prev.items:
            snap = Snapshot.build(self.height, dict(self._working))
        else:
            snap = Snapshot(self.height, prev.items, prev.keys, prev.levels)
        self._dirty = False
        self._snapshots[self.height] = snap
        self._snapshots.pop(self.height - self.retention, None)
        return snap.root

    def snapshot(self, height: int) -> Snapshot:
        snap = self._snapshots.get(height)
        if snap is None:
            if 0 <= height <= self.height:
                raise HeightPruned(f"height {height} is outside the retention window")
            raise HeightPruned(f"height {height} has not been committed")
        return snap

    def root_at(self, height: int) -> bytes:
        return self.snapshot(height).root

    @property
    def root(self) -> bytes:
        return self.root_at(self.height)

    def get_at(self, height: int, key: str) -> bytes | None:
        validate_key(key)
        return self.snapshot(height).items.get(key)

    def keys_at(self, height: int, prefix: str = "") -> list[str]:
        snap = self.snapshot(height)
        lo = bisect.bisect_left(snap.keys, prefix)
        out = []
        for k in snap.keys[lo:]:
            if not k.startswith(prefix):
                break
            out.append(k)
        return out

    # proofs
    def prove_membership(self, height: int, key: str) -> CommitmentProof:
        validate_key(key)
        snap = self.snapshot(height)
        i = bisect.bisect_left(snap.keys, key)
        if i == len(snap.keys) or snap.keys[i] != key:
            raise KeyAbsent(key)
        ex = snap.existence(i)
        return CommitmentProof(ProofKind.MEMBERSHIP, key, ex.value, ex.path)

    def prove_non_membership(self, height: int, key: str) -> CommitmentProof:
        validate_key(key)
        snap = self.snapshot(height)
        i = bisect.bisect_left(snap.keys, key)
        if i < len(snap.keys) and snap.keys[i] == key:
            raise KeyPresent(key)
        left = snap.existence(i - 1) if i > 0 else None
        right = snap.existence(i) if i < len(snap.keys) else None
        return CommitmentProof(ProofKind.NON_MEMBERSHIP, key, b"", (), left, right)
