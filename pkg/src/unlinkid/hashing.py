"""Hash abstraction and domain-separation tags.

Every digest in the package comes from :func:`chf`. Swapping the hash means
changing this module only.
"""
from __future__ import annotations

import enum
import hashlib

DIGEST_SIZE = 32

Digest = bytes

TAG_LEAF = b"\x00"
TAG_NODE = b"\x01"
TAG_SMT = b"\x02"
TAG_IDENTIFIER = b"\x03"
TAG_AUTHENTICATOR = b"\x04"
TAG_SMT_KEY = b"\x05"

MAX_LEAF_PAYLOAD = 1 << 16


def chf(data: bytes) -> Digest:
    return hashlib.sha256(data).digest()


def check_digest(value: object, name: str = "digest") -> Digest:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise ValueError(f"{name} must be {DIGEST_SIZE} bytes")
    return bytes(value)


def hash_leaf(payload: bytes) -> Digest:
    if len(payload) > MAX_LEAF_PAYLOAD:
        raise ValueError(f"leaf payload of {len(payload)} bytes exceeds {MAX_LEAF_PAYLOAD}")
    return hashlib.sha256(TAG_LEAF + payload).digest()


def hash_node(left: Digest, right: Digest) -> Digest:
    return hashlib.sha256(TAG_NODE + left + right).digest()


EMPTY_DIGEST: Digest = hash_leaf(bytes(DIGEST_SIZE))


class Verdict(enum.Enum):
    """Outcome of a proof check. Truthy only for ``ACCEPT``."""

    ACCEPT = "accept"
    REJECT = "reject"
    MALFORMED = "malformed"
    INCOMPATIBLE_BACKEND = "incompatible_backend"

    def __bool__(self) -> bool:
        return self is Verdict.ACCEPT
