import hashlib
import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from ibcsim.errors import HeightPruned, InvalidKey, KeyAbsent, KeyPresent
from ibcsim.store import (
    EMPTY_ROOT, CommitmentProof, ProvableStore, compute_root, verify_membership,
    verify_non_membership, verify_proof, decode_proof,
)


# Independent oracle: recursive construction straight from the tree definition.
def oracle_root(items):
    def h(*parts):
        return hashlib.sha256(b"".join(parts)).digest()

    level = [h(b"\x00", struct.pack(">I", len(k.encode())), k.encode(), items[k])
             for k in sorted(items)]
    if not level:
        return h(b"\x02")
    while len(level) > 1:
        paired = [h(b"\x01", level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        level = paired + ([level[-1]] if len(level) % 2 else [])
    return level[0]


def test_empty_root_is_domain_separated_constant():
    assert EMPTY_ROOT.hex() == hashlib.sha256(b"\x02").hexdigest()
    assert EMPTY_ROOT.hex() == "dbc1b4c900ffe48d575b5da5c638040125f65db0fe3e24494b76ea986457d986"
    s = ProvableStore()
    assert s.commit() == EMPTY_ROOT


def test_single_leaf_root_frozen():
    # leaf = H(00 || 00000001 || "a" || 01)
    s = ProvableStore()
    s.set("a", b"\x01")
    expected = hashlib.sha256(bytes.fromhex("000000000161") + b"\x01").digest()
    assert s.commit() == expected


def test_read_write_delete():
    s = ProvableStore()
    assert s.get("a/b") is None
    s.set("a/b", b"\x01")
    assert s.get("a/b") == b"\x01"
    s.set("a/b", b"\x02")
    assert s.get("a/b") == b"\x02"
    s.delete("a/b")
    assert s.get("a/b") is None
    s.delete("never/set")


@pytest.mark.parametrize("key", ["", "x//y", "/a", "a/", "a" * 513])
def test_invalid_keys(key):
    s = ProvableStore()
    with pytest.raises(InvalidKey):
        s.set(key, b"v")
    with pytest.raises(InvalidKey):
        s.delete(key)


def test_insertion_order_independent():
    items = {f"k/{i}": bytes([i]) for i in range(37)}
    order = list(items)
    a, b = ProvableStore(), ProvableStore()
    for k in order:
        a.set(k, items[k])
    random.Random(4).shuffle(order)
    for k in order:
        b.set(k, items[k])
    assert a.commit() == b.commit() == oracle_root(items)


def test_empty_commit_keeps_root():
    s = ProvableStore()
    s.set("a", b"1")
    r1 = s.commit()
    assert s.commit() == r1
    assert s.height == 2


def test_delete_then_non_membership_verifies():
    s = ProvableStore()
    for k in ("a", "b", "c"):
        s.set(k, k.encode())
    s.commit()
    s.delete("b")
    root = s.commit()
    assert root == oracle_root({"a": b"a", "c": b"c"})
    proof = s.prove_non_membership(s.height, "b")
    assert verify_non_membership(root, "b", proof)


@pytest.mark.parametrize("n", [0, 1, 2, 3, 5, 8, 13, 33])
def test_completeness_against_oracle(n):
    rng = random.Random(n)
    items = {f"p/{rng.randrange(10**6)}": rng.randbytes(rng.randrange(0, 20)) for _ in range(n)}
    s = ProvableStore()
    for k, v in items.items():
        s.set(k, v)
    root = s.commit()
    assert root == oracle_root(items)
    for k, v in items.items():
        assert verify_membership(root, k, v, s.prove_membership(1, k))
    absent = 0
    while absent < 100:
        k = f"p/{rng.randrange(10**6)}" if rng.random() < 0.8 else rng.choice(["a", "z", "p", "q/1"])
        if k in items:
            continue
        proof = s.prove_non_membership(1, k)
        assert verify_non_membership(root, k, proof)
        absent += 1


def test_prove_errors():
    s = ProvableStore()
    s.set("a", b"1")
    s.commit()
    with pytest.raises(KeyAbsent):
        s.prove_membership(1, "b")
    with pytest.raises(KeyPresent):
        s.prove_non_membership(1, "a")


def test_non_membership_fails_after_insert():
    s = ProvableStore()
    s.set("a", b"1")
    s.set("c", b"3")
    s.commit()
    proof = s.prove_non_membership(1, "b")
    s.set("b", b"2")
    r2 = s.commit()
    assert verify_non_membership(s.root_at(1), "b", proof)
    assert not verify_non_membership(r2, "b", proof)


def test_wrong_root_and_removed_step():
    s = ProvableStore()
    for i in range(6):
        s.set(f"k{i}", b"v")
    root = s.commit()
    proof = s.prove_membership(1, "k2")
    assert verify_proof(root, proof)
    assert not verify_proof(b"\x00" * 32, proof)
    shorter = CommitmentProof(proof.kind, proof.key, proof.value, proof.path[:-1])
    assert not verify_proof(root, shorter)


def test_non_membership_cannot_skip_a_key():
    # Neighbours that are not adjacent must not prove absence of the key between them.
    s = ProvableStore()
    for k in ("a", "b", "c", "d", "e"):
        s.set(k, b"x")
    root = s.commit()
    real = s.prove_non_membership(1, "bb")
    forged = CommitmentProof(real.kind, "bb", b"", (),
                             s.prove_non_membership(1, "aa").left,
                             s.prove_non_membership(1, "cc").right)
    assert verify_proof(root, real)
    assert not verify_proof(root, forged)
    # boundary marker forged in the middle of the tree
    mid = CommitmentProof(real.kind, "bb", b"", (), real.left, None)
    assert not verify_proof(root, mid)


def test_exhaustive_byte_flip_on_small_proof():
    s = ProvableStore()
    for k in ("a", "b", "c"):
        s.set(k, k.encode() * 2)
    root = s.commit()
    for proof, check in (
        (s.prove_membership(1, "b"), lambda p: verify_membership(root, "b", b"bb", p)),
        (s.prove_non_membership(1, "bb"), lambda p: verify_non_membership(root, "bb", p)),
    ):
        enc = proof.encode()
        assert check(decode_proof(enc))
        for i in range(len(enc)):
            for bit in range(8):
                mutated = bytearray(enc)
                mutated[i] ^= 1 << bit
                p = decode_proof(bytes(mutated))
                assert p is None or not check(p), (i, bit)


def test_retention_and_pruning():
    s = ProvableStore(retention=4)
    s.set("a", b"1")
    for _ in range(6):
        s.commit()
    with pytest.raises(HeightPruned):
        s.root_at(1)
    with pytest.raises(HeightPruned):
        s.root_at(99)
    s.root_at(3)


def test_transaction_rollback_restores_root():
    s = ProvableStore()
    s.set("a", b"1")
    s.commit()
    before = s.root
    s.begin()
    s.set("a", b"2")
    s.set("b", b"3")
    s.delete("a")
    s.rollback()
    assert s.get("a") == b"1" and s.get("b") is None
    assert s.commit() == before


def test_nested_transaction_release_then_outer_rollback():
    s = ProvableStore()
    s.begin()
    s.begin()
    s.set("x", b"1")
    s.release()
    s.rollback()
    assert s.get("x") is None


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.text("abc/", min_size=1, max_size=6).filter(lambda k: "" not in k.split("/")),
                       st.binary(max_size=4), max_size=20))
def test_root_matches_oracle_property(items):
    s = ProvableStore()
    for k, v in items.items():
        s.set(k, v)
    assert s.commit() == oracle_root(items) == compute_root(items)


def test_binding_over_random_map_pairs():
    rng = random.Random(7)
    for _ in range(10_000):
        a = {f"k{rng.randrange(8)}": bytes([rng.randrange(4)]) for _ in range(rng.randrange(1, 5))}
        b = dict(a)
        k = f"k{rng.randrange(8)}"
        choice = rng.randrange(3)
        if choice == 0 and k in b:
            del b[k]
        elif choice == 1:
            b[k] = bytes([rng.randrange(4, 8)])
        else:
            b[k + "/x"] = b"\x00"
        assert compute_root(a) != compute_root(b)
