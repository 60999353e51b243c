"""Sparse Merkle tree over 256-bit keys with boolean values.

Absent keys map to ``False`` and sit under precomputed default digests, so
inclusion (``True``) and non-inclusion (``False``) proofs have the same shape.
Trees are persistent: :meth:`SparseMerkleTree.set` returns a new tree that
shares every untouched subtree with the old one.

At reduced depth ``d`` (used by exhaustive tests) a key's leaf position is
its top ``d`` bits; two distinct keys may not share a position.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Mapping, Optional, Sequence

from .errors import KeySlotCollision
from .hashing import (
    DIGEST_SIZE,
    EMPTY_DIGEST,
    TAG_SMT,
    TAG_SMT_KEY,
    Digest,
    Verdict,
    check_digest,
    chf,
)

KEY_SIZE = 32
MAX_DEPTH = 256
DEFAULT_DEPTH = 256


def smt_leaf(key: bytes) -> Digest:
    return hashlib.sha256(TAG_SMT + key + b"\x01").digest()


def smt_node(left: Digest, right: Digest) -> Digest:
    return hashlib.sha256(TAG_SMT + left + right).digest()


@lru_cache(maxsize=None)
def default_digests(depth: int) -> tuple[Digest, ...]:
    """Digest of an all-empty subtree at each height ``0..depth``."""
    out = [EMPTY_DIGEST]
    for _ in range(depth):
        out.append(smt_node(out[-1], out[-1]))
    return tuple(out)


def smt_key(commitment: Digest) -> bytes:
    """Sparse-tree key under which an identity commitment is revoked."""
    return chf(TAG_SMT_KEY + check_digest(commitment, "commitment"))


def _check_depth(depth: int) -> int:
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}], got {depth}")
    return depth


def _path(key: bytes, depth: int) -> int:
    return int.from_bytes(key, "big") >> (8 * KEY_SIZE - depth)


class _Node:
    __slots__ = ("digest", "left", "right", "key")

    def __init__(self, digest: Digest, left: Optional["_Node"] = None,
                 right: Optional["_Node"] = None, key: Optional[bytes] = None):
        self.digest = digest
        self.left = left
        self.right = right
        self.key = key


@dataclass(frozen=True)
class SmtProof:
    key: bytes
    value: bool
    siblings: tuple[Digest, ...]  # leaf-to-root, fully expanded

    @property
    def depth(self) -> int:
        return len(self.siblings)

    def compression_bitmap(self) -> bytes:
        """Bit ``i`` (LSB-first) is set when sibling ``i`` equals the level default."""
        defaults = default_digests(len(self.siblings))
        bitmap = bytearray(32)
        for i, s in enumerate(self.siblings):
            if s == defaults[i]:
                bitmap[i // 8] |= 1 << (i % 8)
        return bytes(bitmap)

    def to_bytes(self) -> bytes:
        depth = len(self.siblings)
        if depth > MAX_DEPTH:
            raise ValueError("proof deeper than 256 levels")
        bitmap = self.compression_bitmap()
        kept = [s for i, s in enumerate(self.siblings) if not bitmap[i // 8] >> (i % 8) & 1]
        return (self.key + struct.pack("<BH", int(self.value), depth) + bitmap + b"".join(kept))

    @classmethod
    def from_bytes(cls, data: bytes) -> "SmtProof":
        head = KEY_SIZE + 3 + 32
        if len(data) < head:
            raise ValueError("sparse proof truncated")
        key = bytes(data[:KEY_SIZE])
        value, depth = struct.unpack_from("<BH", data, KEY_SIZE)
        if value not in (0, 1) or not 1 <= depth <= MAX_DEPTH:
            raise ValueError("sparse proof header out of range")
        bitmap = data[KEY_SIZE + 3: head]
        if int.from_bytes(bitmap, "little") >> depth:
            raise ValueError("bitmap marks levels beyond the proof depth")
        defaults = default_digests(depth)
        body = memoryview(data)[head:]
        siblings = []
        off = 0
        for i in range(depth):
            if bitmap[i // 8] >> (i % 8) & 1:
                siblings.append(defaults[i])
            else:
                if off + DIGEST_SIZE > len(body):
                    raise ValueError("sparse proof has fewer siblings than its bitmap requires")
                siblings.append(bytes(body[off: off + DIGEST_SIZE]))
                off += DIGEST_SIZE
        if off != len(body):
            raise ValueError("trailing bytes after sparse proof siblings")
        return cls(key, bool(value), tuple(siblings))

    def uncompressed_size(self) -> int:
        return KEY_SIZE + 3 + 32 + DIGEST_SIZE * len(self.siblings)

    def hex(self) -> str:
        return self.to_bytes().hex()

    @classmethod
    def fromhex(cls, text: str) -> "SmtProof":
        return cls.from_bytes(bytes.fromhex(text))


class SparseMerkleTree:
    """Immutable sparse tree value; updates return new versions."""

    __slots__ = ("depth", "_root", "_entries")

    def __init__(self, depth: int = DEFAULT_DEPTH, _root: Optional[_Node] = None,
                 _entries: Optional[dict[bytes, bool]] = None):
        self.depth = _check_depth(depth)
        self._root = _root
        self._entries = _entries if _entries is not None else {}

    @classmethod
    def from_keys(cls, keys: Sequence[bytes], depth: int = DEFAULT_DEPTH) -> "SparseMerkleTree":
        tree = cls(depth)
        for k in keys:
            tree = tree.set(k, True)
        return tree

    @property
    def root(self) -> Digest:
        if self._root is None:
            return default_digests(self.depth)[self.depth]
        return self._root.digest

    @property
    def entries(self) -> Mapping[bytes, bool]:
        return dict(self._entries)

    def __iter__(self) -> Iterator[bytes]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: bytes) -> bool:
        return self._entries.get(key, False)

    def _descend(self, path: int) -> list[Optional[_Node]]:
        """Nodes on the path from the root (index 0) down to the leaf (index depth)."""
        nodes: list[Optional[_Node]] = [self._root]
        node = self._root
        for level in range(self.depth - 1, -1, -1):
            if node is not None:
                node = node.right if (path >> level) & 1 else node.left
            nodes.append(node)
        return nodes

    def set(self, key: bytes, value: bool) -> "SparseMerkleTree":
        if len(key) != KEY_SIZE:
            raise ValueError(f"key must be {KEY_SIZE} bytes")
        key = bytes(key)
        value = bool(value)
        if self._entries.get(key, False) == value:
            return self
        path = _path(key, self.depth)
        nodes = self._descend(path)
        leaf = nodes[-1]
        if leaf is not None and leaf.key != key:
            raise KeySlotCollision(
                f"keys {leaf.key.hex()[:16]}... and {key.hex()[:16]}... share a leaf at depth {self.depth}")
        defaults = default_digests(self.depth)
        new: Optional[_Node] = _Node(smt_leaf(key), key=key) if value else None
        # rebuild upward; nodes[depth - h] is the ancestor at height h
        for h in range(1, self.depth + 1):
            parent = nodes[self.depth - h]
            bit = (path >> (h - 1)) & 1
            sibling = None if parent is None else (parent.left if bit else parent.right)
            if new is None and sibling is None:
                continue
            left, right = (sibling, new) if bit else (new, sibling)
            ld = left.digest if left is not None else defaults[h - 1]
            rd = right.digest if right is not None else defaults[h - 1]
            new = _Node(smt_node(ld, rd), left, right)
        entries = dict(self._entries)
        if value:
            entries[key] = True
        else:
            del entries[key]
        return SparseMerkleTree(self.depth, new, entries)

    def prove(self, key: bytes) -> SmtProof:
        if len(key) != KEY_SIZE:
            raise ValueError(f"key must be {KEY_SIZE} bytes")
        key = bytes(key)
        path = _path(key, self.depth)
        nodes = self._descend(path)
        leaf = nodes[-1]
        if leaf is not None and leaf.key != key:
            raise KeySlotCollision(f"leaf position of {key.hex()[:16]}... is held by another key")
        defaults = default_digests(self.depth)
        siblings = []
        for h in range(self.depth):
            parent = nodes[self.depth - h - 1]
            sibling = None
            if parent is not None:
                sibling = parent.left if (path >> h) & 1 else parent.right
            siblings.append(sibling.digest if sibling is not None else defaults[h])
        return SmtProof(key, leaf is not None, tuple(siblings))


def smt_new(depth: int = DEFAULT_DEPTH) -> SparseMerkleTree:
    return SparseMerkleTree(depth)


def smt_set(tree: SparseMerkleTree, key: bytes, value: bool) -> SparseMerkleTree:
    return tree.set(key, value)


def smt_prove(tree: SparseMerkleTree, key: bytes) -> SmtProof:
    return tree.prove(key)


def smt_verify(root: Digest, proof: SmtProof) -> Verdict:
    depth = len(proof.siblings)
    if not 1 <= depth <= MAX_DEPTH or len(proof.key) != KEY_SIZE:
        return Verdict.MALFORMED
    if any(len(s) != DIGEST_SIZE for s in proof.siblings):
        return Verdict.MALFORMED
    path = _path(proof.key, depth)
    node = smt_leaf(proof.key) if proof.value else EMPTY_DIGEST
    for h, sibling in enumerate(proof.siblings):
        node = smt_node(sibling, node) if (path >> h) & 1 else smt_node(node, sibling)
    return Verdict.ACCEPT if node == root else Verdict.REJECT
