"""Independent reference computations for the test-suite.

Written against hashlib directly so that they do not share code paths with
the package under test.
"""
from __future__ import annotations

import hashlib


def sha(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


EMPTY = sha(b"\x00" + bytes(32))


def manual_root(leaves: list[bytes]) -> bytes:
    """Pad to a power of two with EMPTY and fold pairwise with the 0x01 node tag."""
    level = list(leaves)
    width = 1
    while width < len(level):
        width *= 2
    level += [EMPTY] * (width - len(level))
    while len(level) > 1:
        level = [sha(b"\x01" + level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def id_leaf(value: bytes, attr: bytes | None = None) -> bytes:
    return sha(b"\x03" + value + (attr or bytes(32)))


def smt_key(commitment: bytes) -> bytes:
    return sha(b"\x05" + commitment)


class DenseSmtOracle:
    """Fully materialised 2**depth-leaf tree for a set of true keys."""

    def __init__(self, depth: int, true_keys: set[bytes]):
        self.depth = depth
        slots = [EMPTY] * (1 << depth)
        self.slot_key: dict[int, bytes] = {}
        for k in true_keys:
            slot = int.from_bytes(k, "big") >> (256 - depth)
            assert slot not in self.slot_key
            self.slot_key[slot] = k
            slots[slot] = sha(b"\x02" + k + b"\x01")
        self.levels = [slots]
        while len(self.levels[-1]) > 1:
            prev = self.levels[-1]
            self.levels.append([sha(b"\x02" + prev[i] + prev[i + 1]) for i in range(0, len(prev), 2)])

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    def value(self, key: bytes) -> bool:
        slot = int.from_bytes(key, "big") >> (256 - self.depth)
        return self.slot_key.get(slot) == key

    def siblings(self, key: bytes) -> list[bytes]:
        pos = int.from_bytes(key, "big") >> (256 - self.depth)
        out = []
        for level in self.levels[:-1]:
            out.append(level[pos ^ 1])
            pos >>= 1
        return out

    def check(self, root: bytes, key: bytes, value: bool, siblings: list[bytes]) -> bool:
        pos = int.from_bytes(key, "big") >> (256 - self.depth)
        node = sha(b"\x02" + key + b"\x01") if value else EMPTY
        for s in siblings:
            node = sha(b"\x02" + s + node) if pos & 1 else sha(b"\x02" + node + s)
            pos >>= 1
        return node == root


def membership_oracle(id_value: bytes, portfolios: dict[bytes, list[bytes]],
                      allowed: set[bytes], revoked: set[bytes]) -> bool:
    """id in I, I in A, I not in B, by plain set membership."""
    return any(id_value in ids and c in allowed and c not in revoked for c, ids in portfolios.items())
