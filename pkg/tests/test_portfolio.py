from __future__ import annotations

import os
import random
import struct

import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDFExpand
import hmac
from hypothesis import given, settings, strategies as st

from oracles import id_leaf, manual_root, sha
from unlinkid.errors import AuthorizationError
from unlinkid.merkle import build_tree, verify_inclusion
from unlinkid.portfolio import (
    DERIVATION_SALT,
    DelegationGrant,
    Identifier,
    PortfolioFile,
    PortfolioSecret,
    bind_authenticator,
    commit_portfolio,
    compose_delegated_proof,
    decode_identifier,
    delegate_subtree,
    derive_portfolio,
    derive_values,
    display_matches,
    encode_identifier,
    generate_random_portfolio,
    seed_from_uli,
)


def hkdf_oracle(seed: bytes, label: bytes, i: int) -> bytes:
    prk = hmac.new(DERIVATION_SALT, seed, "sha256").digest()
    info = struct.pack(">H", len(label)) + label + struct.pack(">Q", i)
    return HKDFExpand(hashes.SHA256(), 16, info).derive(prk)


def test_derivation_matches_hkdf():
    rng = random.Random(2)
    for label in (b"default", b"", b"work"):
        secret = PortfolioSecret(rng.randbytes(32), label)
        values = derive_values(secret, 0, 64)
        assert values == [hkdf_oracle(secret.seed, label, i) for i in range(64)]


def test_derive_deterministic_and_prefix_stable():
    secret = PortfolioSecret(bytes(range(32)))
    a = derive_portfolio(secret, 50)
    assert a == derive_portfolio(PortfolioSecret(bytes(range(32))), 50)
    assert commit_portfolio(a) == commit_portfolio(derive_portfolio(secret, 50))
    for n, k in ((1, 1), (7, 9), (50, 100)):
        assert derive_portfolio(secret, n) == derive_portfolio(secret, n + k)[:n]
    assert derive_values(secret, 10, 20) == derive_values(secret, 0, 20)[10:]


def test_label_separates():
    seed = os.urandom(32)
    a = derive_values(PortfolioSecret(seed, b"a"), 0, 100)
    b = derive_values(PortfolioSecret(seed, b"b"), 0, 100)
    assert not set(a) & set(b)


def test_random_portfolio_no_duplicates_and_disjoint():
    a = generate_random_portfolio(10_000)
    b = generate_random_portfolio(10_000)
    va, vb = {i.value for i in a}, {i.value for i in b}
    assert len(va) == 10_000 and len(vb) == 10_000
    assert not va & vb
    assert [i.index for i in a] == list(range(10_000))


def test_range_errors():
    for bad in (0, (1 << 20) + 1):
        with pytest.raises(ValueError):
            generate_random_portfolio(bad)
        with pytest.raises(ValueError):
            derive_portfolio(PortfolioSecret(bytes(32)), bad)


def test_single_identifier_commitment_is_leaf():
    ids = generate_random_portfolio(1)
    c = commit_portfolio(ids)
    assert c.root == ids[0].leaf == id_leaf(ids[0].value)
    assert c.portfolio_size == 1


def test_commitment_matches_oracle_and_order():
    ids = generate_random_portfolio(11)
    assert commit_portfolio(ids).root == manual_root([id_leaf(i.value) for i in ids])
    swapped = [Identifier(ids[1].value, 0), Identifier(ids[0].value, 1)] + ids[2:]
    assert commit_portfolio(swapped).root != commit_portfolio(ids).root


def test_attr_commitment_changes_root():
    ids = generate_random_portfolio(4)
    attr = os.urandom(32)
    with_attr = [Identifier(ids[0].value, 0, attr)] + ids[1:]
    assert with_attr[0].leaf == id_leaf(ids[0].value, attr)
    assert commit_portfolio(with_attr).root != commit_portfolio(ids).root


def test_commit_rejects_gaps():
    ids = generate_random_portfolio(4)
    with pytest.raises(ValueError):
        commit_portfolio([ids[0], ids[2]])
    with pytest.raises(ValueError):
        commit_portfolio([])


def test_binding():
    c = commit_portfolio(generate_random_portfolio(4))
    auth = os.urandom(64)
    b1, b2 = bind_authenticator(c, auth), bind_authenticator(c, auth)
    assert b1.bound_root == b2.bound_root == sha(b"\x04" + c.root + auth)
    assert b1.root == c.root and b1.registered_digest == c.root
    for bad in (b"", b"x" * 15, b"x" * 4097):
        with pytest.raises(ValueError):
            bind_authenticator(c, bad)


@settings(max_examples=100, deadline=None)
@given(st.binary(min_size=16, max_size=128), st.binary(min_size=16, max_size=128))
def test_binding_distinct_authenticators(a, b):
    c = commit_portfolio(derive_portfolio(PortfolioSecret(bytes(32)), 2))
    if a != b:
        assert bind_authenticator(c, a).bound_root != bind_authenticator(c, b).bound_root


def test_uli_migration_opacity():
    salt = b"user-salt-0123456789"
    seed = seed_from_uli("078-05-1120", salt)
    assert seed == seed_from_uli("078-05-1120", salt)
    assert seed != seed_from_uli("078-05-1120", b"another-salt-abcdef")
    ids = derive_portfolio(PortfolioSecret(seed), 1000)
    assert ids == derive_portfolio(PortfolioSecret(seed_from_uli("078-05-1120", salt)), 1000)
    needles = ("078-05-1120", "078051120")
    for ident in ids:
        assert ident.value != b"078-05-1120"[:16].ljust(16, b"\x00")
        for fmt in ("uuid", "base32", "numeric"):
            for digits in ((9, 38) if fmt == "numeric" else (9,)):
                text = encode_identifier(ident, fmt, digits)
                assert not any(n in text for n in needles)
    with pytest.raises(ValueError):
        seed_from_uli("078-05-1120", b"short")


def test_hamming_distance_consistent_with_uniform():
    values = [int.from_bytes(i.value, "big") for i in generate_random_portfolio(10_000)]
    rng = random.Random(9)
    dists = [bin(values[a] ^ values[b]).count("1")
             for a, b in (rng.sample(range(10_000), 2) for _ in range(10_000))]
    assert abs(sum(dists) / len(dists) - 64) <= 3


def test_value_does_not_reveal_index():
    rng = random.Random(4)
    common_prefix = []
    firsts = {i: set() for i in range(4)}
    for _ in range(1000):
        vals = derive_values(PortfolioSecret(rng.randbytes(32)), 0, 4)
        for i, v in enumerate(vals):
            firsts[i].add(v[0])
        for a, b in zip(vals, vals[1:]):
            x = int.from_bytes(a, "big") ^ int.from_bytes(b, "big")
            common_prefix.append(128 - x.bit_length())
    # uniform values: expected shared prefix is about one bit and the first byte is spread out
    assert sum(common_prefix) / len(common_prefix) < 2
    assert all(len(s) > 200 for s in firsts.values())


def test_encodings():
    zero = Identifier(bytes(16), 0)
    assert encode_identifier(zero, "uuid") == "00000000-0000-0000-0000-000000000000"
    for ident in generate_random_portfolio(200):
        u, b = encode_identifier(ident, "uuid"), encode_identifier(ident, "base32")
        assert len(u) == 36 and len(b) == 26
        assert decode_identifier(u) == decode_identifier(b) == ident.value
        assert display_matches(u, ident.value) and display_matches(b.lower(), ident.value)
        n = encode_identifier(ident, "numeric", 12)
        assert len(n) == 12 and int(n) == int.from_bytes(ident.value, "big") % 10**12
        assert display_matches(n, ident.value)
    for bad in (8, 39):
        with pytest.raises(ValueError):
            encode_identifier(zero, "numeric", bad)
    with pytest.raises(ValueError):
        decode_identifier("123456789", "numeric")


def test_numeric_nine_digit_collisions_bounded():
    values = {os.urandom(16) for _ in range(100_000)}
    encoded = [encode_identifier(v, "numeric", 9) for v in values]
    collisions = len(encoded) - len(set(encoded))
    assert 0 <= collisions <= 25


def test_delegation_over_upper_half():
    ids = derive_portfolio(PortfolioSecret(os.urandom(32)), 8)
    c = commit_portfolio(ids)
    grant = delegate_subtree(ids, c, 4, 8)
    assert {i.index for i in grant.identifiers} == {4, 5, 6, 7}
    tree = build_tree([i.leaf for i in ids])
    for index in range(4, 8):
        proof = compose_delegated_proof(grant, index)
        assert proof == tree.prove(index)
        assert verify_inclusion(c.root, ids[index].leaf, proof)
    for index in range(4):
        with pytest.raises(AuthorizationError):
            compose_delegated_proof(grant, index)
    again = DelegationGrant.from_bytes(grant.to_bytes())
    assert again == grant
    # outside identifiers never appear in the grant bytes
    raw = grant.to_bytes()
    assert not any(i.value in raw for i in ids[:4])


def test_full_and_misaligned_delegation():
    ids = generate_random_portfolio(8)
    c = commit_portfolio(ids)
    full = delegate_subtree(ids, c, 0, 8)
    assert full.upper_path.siblings == () and full.subtree_root == c.root
    for start, end in ((1, 3), (2, 5), (0, 16), (4, 4), (6, 10)):
        with pytest.raises(ValueError):
            delegate_subtree(ids, c, start, end)


def test_delegation_partial_tail():
    ids = generate_random_portfolio(6)
    c = commit_portfolio(ids)
    grant = delegate_subtree(ids, c, 4, 8)
    for index in (4, 5):
        assert verify_inclusion(c.root, ids[index].leaf, compose_delegated_proof(grant, index))
    with pytest.raises(AuthorizationError):
        compose_delegated_proof(grant, 6)


def test_portfolio_file_round_trip_and_extend():
    secret = PortfolioSecret(os.urandom(32), b"lbl")
    pf = PortfolioFile(derive_portfolio(secret, 5), secret)
    raw = pf.to_bytes()
    assert raw[:5] == b"ULID1"
    again = PortfolioFile.from_bytes(raw)
    assert again.identifiers == pf.identifiers and again.secret == secret
    again.extend(8)
    assert again.identifiers == derive_portfolio(secret, 8)
    rnd = PortfolioFile(generate_random_portfolio(3))
    assert PortfolioFile.from_bytes(rnd.to_bytes()).identifiers == rnd.identifiers
    assert "redacted" in repr(secret) and secret.seed.hex() not in repr(secret)
