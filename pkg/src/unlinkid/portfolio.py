"""Participant-side identifier portfolios.

A portfolio is an ordered list of 128-bit identifiers, generated either from
the OS CSPRNG or deterministically from a 256-bit seed. Its Merkle root is the
identity commitment; the identifiers themselves never leave the participant.
"""
from __future__ import annotations

import base64
import hmac
import secrets
import struct
import uuid
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import AuthorizationError
from .hashing import (
    DIGEST_SIZE,
    EMPTY_DIGEST,
    TAG_AUTHENTICATOR,
    TAG_IDENTIFIER,
    Digest,
    check_digest,
    chf,
)
from .merkle import InclusionProof, MerkleTree, build_tree, prove_inclusion

ID_SIZE = 16
MAX_PORTFOLIO = 1 << 20
DERIVATION_SALT = b"unlinkid/portfolio-derivation/v1"
DEFAULT_LABEL = b"default"
PORTFOLIO_MAGIC = b"ULID1"

_ZERO_ATTR = bytes(DIGEST_SIZE)


@dataclass(frozen=True)
class Identifier:
    value: bytes
    index: int
    attr_commitment: Optional[Digest] = None

    def __post_init__(self) -> None:
        if len(self.value) != ID_SIZE:
            raise ValueError(f"identifier value must be {ID_SIZE} bytes")
        if self.attr_commitment is not None:
            check_digest(self.attr_commitment, "attr_commitment")

    @property
    def leaf(self) -> Digest:
        return identifier_leaf(self.value, self.attr_commitment)

    def __str__(self) -> str:
        return encode_identifier(self.value, "uuid")


def identifier_leaf(value: bytes, attr_commitment: Optional[Digest] = None) -> Digest:
    return chf(TAG_IDENTIFIER + value + (attr_commitment or _ZERO_ATTR))


@dataclass(frozen=True)
class PortfolioSecret:
    seed: bytes
    derivation_label: bytes = DEFAULT_LABEL

    def __post_init__(self) -> None:
        if len(self.seed) != 32:
            raise ValueError("portfolio seed must be 32 bytes")

    def __repr__(self) -> str:
        return f"PortfolioSecret(seed=<redacted>, derivation_label={self.derivation_label!r})"


def _check_n(n: int) -> None:
    if not 1 <= n <= MAX_PORTFOLIO:
        raise ValueError(f"portfolio size must be in [1, {MAX_PORTFOLIO}], got {n}")


def generate_random_portfolio(n: int) -> list[Identifier]:
    _check_n(n)
    seen: set[bytes] = set()
    out = []
    while len(out) < n:
        v = secrets.token_bytes(ID_SIZE)
        if v in seen:
            continue
        seen.add(v)
        out.append(Identifier(v, len(out)))
    return out


def _prk(secret: PortfolioSecret) -> bytes:
    # HKDF-Extract with a fixed salt
    return hmac.digest(DERIVATION_SALT, secret.seed, "sha256")


def derive_values(secret: PortfolioSecret, start: int, stop: int) -> list[bytes]:
    """Raw identifier values for indices ``start..stop-1`` (single-block HKDF-Expand)."""
    prk = _prk(secret)
    head = struct.pack(">H", len(secret.derivation_label)) + secret.derivation_label
    digest = hmac.digest
    return [digest(prk, head + struct.pack(">Q", i) + b"\x01", "sha256")[:ID_SIZE]
            for i in range(start, stop)]


def derive_portfolio(secret: PortfolioSecret, n: int) -> list[Identifier]:
    _check_n(n)
    return [Identifier(v, i) for i, v in enumerate(derive_values(secret, 0, n))]


def seed_from_uli(uli: str, salt: bytes) -> bytes:
    """Seed for migrating a legacy identifier; the raw ULI never reaches a derived value."""
    if len(salt) < 16:
        raise ValueError("migration salt must be at least 16 bytes")
    return chf(salt + uli.encode("utf-8"))


@dataclass(frozen=True)
class IdentityCommitment:
    root: Digest
    portfolio_size: int
    bound_root: Optional[Digest] = None

    @property
    def registered_digest(self) -> Digest:
        return self.root


def commit_portfolio(ids: Sequence[Identifier]) -> IdentityCommitment:
    return IdentityCommitment(portfolio_tree(ids).root, len(ids))


def portfolio_tree(ids: Sequence[Identifier]) -> MerkleTree:
    if not ids:
        raise ValueError("cannot commit to an empty portfolio")
    for i, ident in enumerate(ids):
        if ident.index != i:
            raise ValueError(f"identifier at position {i} carries index {ident.index}")
    return build_tree([ident.leaf for ident in ids])


def bind_authenticator(commitment: IdentityCommitment, authenticator: bytes) -> IdentityCommitment:
    if not 16 <= len(authenticator) <= 1 << 12:
        raise ValueError("authenticator must be between 16 and 4096 bytes")
    bound = chf(TAG_AUTHENTICATOR + commitment.root + authenticator)
    return IdentityCommitment(commitment.root, commitment.portfolio_size, bound)


# -- display encodings -------------------------------------------------------

ID_FORMATS = ("uuid", "base32", "numeric")


def _raw(value) -> bytes:
    return value.value if isinstance(value, Identifier) else bytes(value)


def encode_identifier(value, fmt: str = "uuid", digits: int = 9) -> str:
    """Render an identifier for forms and documents.

    ``numeric`` reduces the value modulo ``10**digits`` and is lossy; it exists
    for fields that only accept digit strings.
    """
    raw = _raw(value)
    if len(raw) != ID_SIZE:
        raise ValueError(f"identifier value must be {ID_SIZE} bytes")
    if fmt == "uuid":
        return str(uuid.UUID(bytes=raw))
    if fmt == "base32":
        return base64.b32encode(raw).decode("ascii").rstrip("=")
    if fmt == "numeric":
        if not 9 <= digits <= 38:
            raise ValueError("numeric encoding needs 9..38 digits")
        return str(int.from_bytes(raw, "big") % 10**digits).zfill(digits)
    raise ValueError(f"unknown identifier format {fmt!r}")


def decode_identifier(text: str, fmt: Optional[str] = None) -> bytes:
    """Inverse of the lossless encodings; ``fmt=None`` sniffs uuid vs base32."""
    text = text.strip()
    if fmt is None:
        fmt = "uuid" if len(text) == 36 and text.count("-") == 4 else "base32"
    if fmt == "uuid":
        return uuid.UUID(text).bytes
    if fmt == "base32":
        if len(text) != 26:
            raise ValueError("base32 identifiers are 26 characters")
        return base64.b32decode(text.upper() + "======")
    raise ValueError(f"{fmt!r} encoding cannot be decoded")


def display_matches(display: str, value: bytes) -> bool:
    """True when ``display`` is any supported rendering of ``value``."""
    display = display.strip()
    if display.isdigit():
        if not 9 <= len(display) <= 38:
            return False
        return encode_identifier(value, "numeric", len(display)) == display
    try:
        return decode_identifier(display) == value
    except ValueError:
        return False


# -- delegation --------------------------------------------------------------

@dataclass(frozen=True)
class DelegationGrant:
    """Everything a surrogate needs to prove identifiers in ``[start, end)``.

    Only the identifiers inside the range are carried; the rest of the
    portfolio is represented by the digests on ``upper_path``.
    """

    subtree_root: Digest
    start: int
    end: int
    identifiers: tuple[Identifier, ...]
    upper_path: InclusionProof
    commitment_root: Digest

    def to_bytes(self) -> bytes:
        upper = self.upper_path.to_bytes()
        out = [b"ULDG1", self.commitment_root, self.subtree_root,
               struct.pack("<III", self.start, self.end, len(self.identifiers))]
        for ident in self.identifiers:
            out.append(struct.pack("<I", ident.index) + ident.value + (ident.attr_commitment or _ZERO_ATTR))
        out.append(struct.pack("<H", len(upper)) + upper)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DelegationGrant":
        if data[:5] != b"ULDG1":
            raise ValueError("not a delegation grant")
        off = 5
        commitment_root = data[off: off + 32]
        subtree_root = data[off + 32: off + 64]
        off += 64
        start, end, count = struct.unpack_from("<III", data, off)
        off += 12
        ids = []
        for _ in range(count):
            (index,) = struct.unpack_from("<I", data, off)
            value = data[off + 4: off + 20]
            attr = data[off + 20: off + 52]
            ids.append(Identifier(value, index, None if attr == _ZERO_ATTR else attr))
            off += 52
        (ulen,) = struct.unpack_from("<H", data, off)
        upper = InclusionProof.from_bytes(data[off + 2: off + 2 + ulen])
        if off + 2 + ulen != len(data):
            raise ValueError("trailing bytes after delegation grant")
        return cls(subtree_root, start, end, tuple(ids), upper, commitment_root)


def delegate_subtree(ids: Sequence[Identifier], commitment: IdentityCommitment,
                     start: int, end: int) -> DelegationGrant:
    tree = portfolio_tree(ids)
    if tree.root != commitment.root:
        raise ValueError("identifiers do not match the commitment")
    width = 1 << tree.depth
    length = end - start
    if length <= 0 or length & (length - 1) or start % length or end > width or start >= len(ids):
        raise ValueError(f"range [{start}, {end}) is not an aligned subtree of a {width}-leaf tree")
    height = length.bit_length() - 1
    subtree_root = tree.levels[height][start >> height]
    # path from the subtree root up to the commitment root
    pos = start >> height
    siblings, directions = [], []
    for level in tree.levels[height:-1]:
        siblings.append(level[pos ^ 1])
        directions.append(pos & 1)
        pos >>= 1
    upper = InclusionProof(start >> height, tuple(siblings), tuple(directions))
    return DelegationGrant(subtree_root, start, end, tuple(ids[start:min(end, len(ids))]),
                           upper, commitment.root)


def compose_delegated_proof(grant: DelegationGrant, index: int) -> InclusionProof:
    if not grant.start <= index < grant.start + len(grant.identifiers):
        raise AuthorizationError(f"index {index} is outside the delegated range [{grant.start}, {grant.end})")
    length = grant.end - grant.start
    leaves = [ident.leaf for ident in grant.identifiers]
    leaves += [EMPTY_DIGEST] * (length - len(leaves))
    sub = build_tree(leaves)
    if sub.root != grant.subtree_root:
        raise ValueError("grant material does not reproduce its subtree root")
    local = prove_inclusion(sub, index - grant.start)
    return InclusionProof(index, local.siblings + grant.upper_path.siblings,
                          local.directions + grant.upper_path.directions)


# -- portfolio file ----------------------------------------------------------

@dataclass
class PortfolioFile:
    identifiers: list[Identifier]
    secret: Optional[PortfolioSecret] = None

    def to_bytes(self) -> bytes:
        out = [PORTFOLIO_MAGIC, struct.pack("<I", len(self.identifiers))]
        if self.secret is None:
            out.append(b"\x00")
        else:
            label = self.secret.derivation_label
            out.append(b"\x01" + self.secret.seed + struct.pack("<H", len(label)) + label)
        for ident in self.identifiers:
            out.append(ident.value + (ident.attr_commitment or _ZERO_ATTR))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PortfolioFile":
        if data[:5] != PORTFOLIO_MAGIC:
            raise ValueError("not a portfolio file")
        (n,) = struct.unpack_from("<I", data, 5)
        off = 9
        secret = None
        if data[off] == 1:
            seed = data[off + 1: off + 33]
            (llen,) = struct.unpack_from("<H", data, off + 33)
            secret = PortfolioSecret(seed, data[off + 35: off + 35 + llen])
            off += 35 + llen
        elif data[off] != 0:
            raise ValueError("bad seed flag in portfolio file")
        else:
            off += 1
        if len(data) != off + n * (ID_SIZE + DIGEST_SIZE):
            raise ValueError("portfolio file length does not match its count")
        ids = []
        for i in range(n):
            rec = data[off + i * 48: off + (i + 1) * 48]
            attr = rec[16:]
            ids.append(Identifier(rec[:16], i, None if attr == _ZERO_ATTR else attr))
        return cls(ids, secret)

    def extend(self, n: int) -> None:
        """Grow a derived portfolio to ``n`` identifiers; existing ones are kept."""
        if self.secret is None:
            raise ValueError("only seed-derived portfolios can be extended")
        _check_n(n)
        have = len(self.identifiers)
        for i, v in enumerate(derive_values(self.secret, have, n), start=have):
            self.identifiers.append(Identifier(v, i))
