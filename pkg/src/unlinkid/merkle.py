"""Dense Merkle tree with positional inclusion proofs.

Leaves are digests. A tree over ``n`` leaves is padded with
:data:`~unlinkid.hashing.EMPTY_DIGEST` up to the next power of two; a
single-leaf tree has depth 0 and its root is the leaf itself.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

from .hashing import DIGEST_SIZE, EMPTY_DIGEST, Digest, Verdict, check_digest, hash_node

MAX_LEAVES = 1 << 24


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    siblings: tuple[Digest, ...]
    directions: tuple[int, ...]  # leaf-to-root; 1 means the running node is a right child

    @property
    def depth(self) -> int:
        return len(self.siblings)

    def to_bytes(self) -> bytes:
        depth = len(self.siblings)
        bits = bytearray((depth + 7) // 8)
        for i, d in enumerate(self.directions):
            if d:
                bits[i // 8] |= 1 << (i % 8)
        return struct.pack("<IB", self.leaf_index, depth) + b"".join(self.siblings) + bytes(bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "InclusionProof":
        if len(data) < 5:
            raise ValueError("inclusion proof truncated")
        index, depth = struct.unpack_from("<IB", data)
        nbits = (depth + 7) // 8
        if len(data) != 5 + depth * DIGEST_SIZE + nbits:
            raise ValueError("inclusion proof length does not match its depth")
        siblings = tuple(data[5 + i * DIGEST_SIZE: 5 + (i + 1) * DIGEST_SIZE] for i in range(depth))
        bits = data[5 + depth * DIGEST_SIZE:]
        if depth % 8 and bits[-1] >> (depth % 8):
            raise ValueError("direction padding bits must be zero")
        directions = tuple((bits[i // 8] >> (i % 8)) & 1 for i in range(depth))
        return cls(index, siblings, directions)

    def hex(self) -> str:
        return self.to_bytes().hex()

    @classmethod
    def fromhex(cls, text: str) -> "InclusionProof":
        return cls.from_bytes(bytes.fromhex(text))


@dataclass(frozen=True, eq=False)
class MerkleTree:
    """Immutable padded tree. ``levels[0]`` holds the padded leaves, ``levels[-1]`` the root."""

    levels: tuple[tuple[Digest, ...], ...]
    leaf_count: int

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def root(self) -> Digest:
        return self.levels[-1][0]

    @property
    def leaves(self) -> tuple[Digest, ...]:
        return self.levels[0][: self.leaf_count]

    def prove(self, index: int) -> InclusionProof:
        return prove_inclusion(self, index)


def _padded_width(n: int) -> int:
    return 1 << (n - 1).bit_length()


def build_tree(leaves: Sequence[Digest]) -> MerkleTree:
    n = len(leaves)
    if n == 0:
        raise ValueError("a Merkle tree needs at least one leaf")
    if n > MAX_LEAVES:
        raise ValueError(f"{n} leaves exceeds the maximum of {MAX_LEAVES}")
    level = [check_digest(leaf, "leaf") for leaf in leaves]
    level.extend([EMPTY_DIGEST] * (_padded_width(n) - n))
    levels = [tuple(level)]
    while len(level) > 1:
        level = [hash_node(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(tuple(level))
    return MerkleTree(tuple(levels), n)


def prove_inclusion(tree: MerkleTree, index: int) -> InclusionProof:
    if not 0 <= index < tree.leaf_count:
        raise ValueError(f"leaf index {index} outside [0, {tree.leaf_count})")
    siblings = []
    directions = []
    pos = index
    for level in tree.levels[:-1]:
        siblings.append(level[pos ^ 1])
        directions.append(pos & 1)
        pos >>= 1
    return InclusionProof(index, tuple(siblings), tuple(directions))


def fold_path(leaf: Digest, siblings: Sequence[Digest], directions: Sequence[int]) -> Digest:
    node = leaf
    for sibling, d in zip(siblings, directions):
        node = hash_node(sibling, node) if d else hash_node(node, sibling)
    return node


def verify_inclusion(root: Digest, leaf: Digest, proof: InclusionProof) -> Verdict:
    """Fold ``leaf`` up through the proof and compare with ``root``.

    Returns ``MALFORMED`` when the proof's shape is inconsistent (length
    mismatch, wrong digest widths), ``REJECT`` when it is well formed but
    does not reproduce the root or its directions disagree with its index.
    """
    depth = len(proof.siblings)
    if len(proof.directions) != depth or depth > 24:
        return Verdict.MALFORMED
    if any(len(s) != DIGEST_SIZE for s in proof.siblings) or len(leaf) != DIGEST_SIZE:
        return Verdict.MALFORMED
    if proof.leaf_index < 0 or proof.leaf_index >> depth:
        return Verdict.REJECT
    for i, d in enumerate(proof.directions):
        if d not in (0, 1) or d != (proof.leaf_index >> i) & 1:
            return Verdict.REJECT
    if fold_path(leaf, proof.siblings, proof.directions) != root:
        return Verdict.REJECT
    return Verdict.ACCEPT
