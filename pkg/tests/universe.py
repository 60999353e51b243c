"""Small registries of portfolios for exhaustive relation checks."""
from __future__ import annotations

import random
from typing import Iterable

from unlinkid.hashing import EMPTY_DIGEST
from unlinkid.legitimacy import LegitimacyStatement, LegitimacyWitness
from unlinkid.merkle import MerkleTree, build_tree
from unlinkid.portfolio import PortfolioSecret, commit_portfolio, derive_portfolio, portfolio_tree
from unlinkid.smt import SparseMerkleTree, smt_key


class Universe:
    """``n_commit`` portfolios of ``n_ids`` identifiers, SMT keys in distinct depth-``depth`` slots."""

    def __init__(self, seed: int, n_commit: int = 8, n_ids: int = 8, depth: int = 8):
        rng = random.Random(seed)
        self.depth = depth
        while True:
            self.portfolios = [derive_portfolio(PortfolioSecret(rng.randbytes(32)), n_ids) for _ in range(n_commit)]
            self.commitments = [commit_portfolio(p).root for p in self.portfolios]
            slots = {int.from_bytes(smt_key(c), "big") >> (256 - depth) for c in self.commitments}
            if len(slots) == n_commit:
                break
        self.trees: list[MerkleTree] = [portfolio_tree(p) for p in self.portfolios]
        self.everyone = build_tree(self.commitments)
        self.values = [{i.value for i in p} for p in self.portfolios]

    def roots(self, allowed: Iterable[int], revoked: Iterable[int]) -> tuple[MerkleTree, SparseMerkleTree, list[int]]:
        order = list(allowed)
        allow = build_tree([self.commitments[j] for j in order]) if order else build_tree([EMPTY_DIGEST])
        block = SparseMerkleTree.from_keys([smt_key(self.commitments[j]) for j in revoked], self.depth)
        return allow, block, order

    def witness(self, owner: int, index: int, claimed: int, allow: MerkleTree, order: list[int],
                block: SparseMerkleTree) -> LegitimacyWitness:
        """Best available witness that identifier ``index`` of portfolio ``owner`` lies under commitment ``claimed``.

        Proofs are honest wherever an honest proof exists; otherwise they are
        taken from the nearest structure (the tree of every commitment, the
        claimed commitment's own tree), so a sound relation must reject them.
        """
        ident = self.portfolios[owner][index]
        commitment = self.commitments[claimed]
        id_proof = self.trees[claimed].prove(index)
        allow_proof = allow.prove(order.index(claimed)) if claimed in order else self.everyone.prove(claimed)
        return LegitimacyWitness(ident.value, commitment, id_proof, allow_proof, block.prove(smt_key(commitment)))

    def oracle(self, value: bytes, allowed: set[int], revoked: set[int]) -> bool:
        return any(value in self.values[j] and j in allowed and j not in revoked for j in range(len(self.values)))

    @staticmethod
    def statement(value: bytes, allow: MerkleTree, block: SparseMerkleTree, epoch: int = 1) -> LegitimacyStatement:
        return LegitimacyStatement(value, allow.root, block.root, epoch)
