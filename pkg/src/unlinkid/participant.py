"""Participant agent: identifier selection, witness assembly and presentation.

Bundles and membership witnesses are fetched at sync time, so a presentation
itself never talks to the coordinator.
"""
from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .coordinator import RootBundle
from .errors import AuthorizationError, PortfolioExhausted, RefusalToProve, StaleWitnessError
from .hashing import Digest
from .keystore import Keystore
from .legitimacy import (
    DisclosingBackend,
    LegitimacyProof,
    LegitimacyStatement,
    LegitimacyWitness,
    ProofBackend,
    prove,
)
from .merkle import InclusionProof, MerkleTree, verify_inclusion
from .portfolio import (
    DelegationGrant,
    Identifier,
    IdentityCommitment,
    PortfolioFile,
    PortfolioSecret,
    compose_delegated_proof,
    delegate_subtree,
    encode_identifier,
    portfolio_tree,
)
from .smt import SmtProof, smt_key, smt_verify

MODES = ("per_interaction", "per_relying_party", "static_scoped")
_MODE_CODES = {m: i for i, m in enumerate(MODES)}
POLICY_VERSION = 1


def canonical_label(label: str | bytes) -> bytes:
    if isinstance(label, bytes):
        label = label.decode("utf-8")
    raw = label.casefold().encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


@dataclass
class SelectionPolicy:
    mode: str = "per_interaction"
    cursor: int = 0
    rp_map: dict[bytes, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown selection mode {self.mode!r}")

    def select(self, portfolio_size: int, rp_label: str | bytes | None = None) -> int:
        if self.mode == "per_interaction":
            return self._fresh(portfolio_size)
        if self.mode == "static_scoped":
            key = b""
        else:
            if rp_label is None:
                raise ValueError("per_relying_party selection needs a relying-party label")
            key = canonical_label(rp_label)
        if key not in self.rp_map:
            self.rp_map[key] = self._fresh(portfolio_size)
        return self.rp_map[key]

    def _fresh(self, portfolio_size: int) -> int:
        if self.cursor >= portfolio_size:
            raise PortfolioExhausted(
                f"all {portfolio_size} identifiers are used; extend the portfolio and re-register")
        self.cursor += 1
        return self.cursor - 1

    def to_bytes(self) -> bytes:
        out = [struct.pack("<BBII", POLICY_VERSION, _MODE_CODES[self.mode], self.cursor, len(self.rp_map))]
        for key, index in sorted(self.rp_map.items()):
            out.append(struct.pack("<H", len(key)) + key + struct.pack("<I", index))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SelectionPolicy":
        version, mode, cursor, count = struct.unpack_from("<BBII", data)
        if version != POLICY_VERSION:
            raise ValueError(f"unsupported policy file version {version}")
        off = 10
        rp_map = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            key = bytes(data[off + 2: off + 2 + n])
            (index,) = struct.unpack_from("<I", data, off + 2 + n)
            rp_map[key] = index
            off += 6 + n
        return cls(MODES[mode], cursor, rp_map)


def select_identifier(policy: SelectionPolicy, portfolio: Sequence[Identifier],
                      rp_label: str | bytes | None = None) -> Identifier:
    return portfolio[policy.select(len(portfolio), rp_label)]


def assemble_witness(ident: Identifier, id_proof: InclusionProof, commitment: Digest,
                     bundle: RootBundle, allow_proof: InclusionProof, block_proof: SmtProof) -> LegitimacyWitness:
    """Pair an identifier's proofs with a bundle, checking they belong together."""
    if not verify_inclusion(commitment, ident.leaf, id_proof):
        raise ValueError("identifier proof does not lead to the commitment")
    if not verify_inclusion(bundle.allow_root, commitment, allow_proof):
        raise StaleWitnessError(f"allow proof does not match the epoch {bundle.epoch} allow root; re-sync")
    if block_proof.key != smt_key(commitment) or not smt_verify(bundle.block_root, block_proof):
        raise StaleWitnessError(f"block proof does not match the epoch {bundle.epoch} block root; re-sync")
    if block_proof.value:
        raise RefusalToProve("identity commitment is revoked")
    return LegitimacyWitness(ident.value, commitment, id_proof, allow_proof, block_proof, ident.attr_commitment)


@dataclass(frozen=True)
class Presentation:
    display: str
    proof: LegitimacyProof
    statement: LegitimacyStatement
    bundle: RootBundle


def build_presentation(ident: Identifier, witness: LegitimacyWitness, bundle: RootBundle,
                       context: bytes, backend: ProofBackend, fmt: str = "uuid", digits: int = 9) -> Presentation:
    statement = LegitimacyStatement(ident.value, bundle.allow_root, bundle.block_root, bundle.epoch, context or None)
    proof = prove(backend, statement, witness)
    return Presentation(encode_identifier(ident, fmt, digits), proof, statement, bundle)


class Participant:
    """Holds a portfolio, its commitment, a selection policy and synced witnesses."""

    def __init__(self, identifiers: Sequence[Identifier], policy: Optional[SelectionPolicy] = None, *,
                 secret: Optional[PortfolioSecret] = None, coordinator_key: Optional[bytes] = None,
                 display_format: str = "uuid", digits: int = 9):
        self.identifiers = list(identifiers)
        self.secret = secret
        self.policy = policy or SelectionPolicy()
        self.coordinator_key = coordinator_key
        self.display_format = display_format
        self.digits = digits
        self.bundles: dict[int, RootBundle] = {}
        self.witnesses: dict[int, tuple[InclusionProof, SmtProof]] = {}
        self._rebuild()

    def _rebuild(self) -> None:
        self.tree: MerkleTree = portfolio_tree(self.identifiers)
        self.commitment = IdentityCommitment(self.tree.root, len(self.identifiers))

    def extend(self, n: int) -> None:
        pf = PortfolioFile(self.identifiers, self.secret)
        pf.extend(n)
        self.identifiers = pf.identifiers
        self._rebuild()

    def register(self, coordinator) -> dict:
        return coordinator.register_commitment(self.commitment.root)

    def sync(self, coordinator, epoch: Optional[int] = None) -> RootBundle:
        bundle = coordinator.fetch_bundle(epoch)
        if self.coordinator_key is not None and not bundle.verify_signature(self.coordinator_key):
            raise ValueError("bundle signature does not verify under the coordinator key")
        self.bundles[bundle.epoch] = bundle
        self.witnesses[bundle.epoch] = coordinator.membership_witness(self.commitment.root, bundle.epoch)
        return bundle

    @property
    def latest_epoch(self) -> Optional[int]:
        return max(self.bundles) if self.bundles else None

    def witness(self, ident: Identifier, epoch: int) -> LegitimacyWitness:
        allow_proof, block_proof = self.witnesses[epoch]
        return assemble_witness(ident, self.tree.prove(ident.index), self.commitment.root,
                                self.bundles[epoch], allow_proof, block_proof)

    def present(self, rp_label: str | bytes | None = None, *, epoch: Optional[int] = None,
                context: bytes = b"", backend: Optional[ProofBackend] = None) -> Presentation:
        epoch = self.latest_epoch if epoch is None else epoch
        if epoch is None or epoch not in self.bundles:
            raise StaleWitnessError("no synced bundle for the requested epoch; run sync first")
        bundle = self.bundles[epoch]
        if self.coordinator_key is not None and not bundle.verify_signature(self.coordinator_key):
            raise ValueError("cached bundle signature does not verify")
        # advance the policy only once the proof exists
        policy = copy.deepcopy(self.policy)
        ident = self.identifiers[policy.select(len(self.identifiers), rp_label)]
        presentation = build_presentation(ident, self.witness(ident, epoch), bundle, context,
                                          backend or DisclosingBackend(), self.display_format, self.digits)
        self.policy = policy
        return presentation

    def delegate(self, start: int, end: int) -> DelegationGrant:
        return delegate_subtree(self.identifiers, self.commitment, start, end)

    # -- keystore ------------------------------------------------------------

    def save(self, store: Keystore) -> None:
        store.write("portfolio.bin", PortfolioFile(self.identifiers, self.secret).to_bytes())
        store.write("policy.bin", self.policy.to_bytes())
        meta = {"coordinator_key": self.coordinator_key.hex() if self.coordinator_key else None,
                "display_format": self.display_format, "digits": self.digits}
        store.write("participant.json", json.dumps(meta, sort_keys=True).encode())
        for epoch, bundle in self.bundles.items():
            store.write(f"bundles/{epoch:08d}.bin", bundle.to_bytes())
        for epoch, (allow_proof, block_proof) in self.witnesses.items():
            a, b = allow_proof.to_bytes(), block_proof.to_bytes()
            store.write(f"witnesses/{epoch:08d}.bin", struct.pack("<I", len(a)) + a + b)

    @classmethod
    def load(cls, store: Keystore) -> "Participant":
        pf = PortfolioFile.from_bytes(store.read("portfolio.bin"))
        policy = SelectionPolicy.from_bytes(store.read("policy.bin"))
        meta = json.loads(store.read("participant.json"))
        key = bytes.fromhex(meta["coordinator_key"]) if meta["coordinator_key"] else None
        p = cls(pf.identifiers, policy, secret=pf.secret, coordinator_key=key,
                display_format=meta["display_format"], digits=meta["digits"])
        for name in store.list("bundles"):
            bundle = RootBundle.from_bytes(store.read(name))
            p.bundles[bundle.epoch] = bundle
        for name in store.list("witnesses"):
            epoch = int(name.rsplit("/", 1)[1].split(".")[0])
            blob = store.read(name)
            (n,) = struct.unpack_from("<I", blob)
            p.witnesses[epoch] = (InclusionProof.from_bytes(blob[4:4 + n]), SmtProof.from_bytes(blob[4 + n:]))
        return p


class Surrogate:
    """Holder of a delegation grant; proves identifiers in its range without the owner."""

    def __init__(self, grant: DelegationGrant):
        self.grant = grant
        self.bundles: dict[int, RootBundle] = {}
        self.witnesses: dict[int, tuple[InclusionProof, SmtProof]] = {}

    def sync(self, coordinator, epoch: Optional[int] = None) -> RootBundle:
        bundle = coordinator.fetch_bundle(epoch)
        self.bundles[bundle.epoch] = bundle
        self.witnesses[bundle.epoch] = coordinator.membership_witness(self.grant.commitment_root, bundle.epoch)
        return bundle

    def identifier(self, index: int) -> Identifier:
        for ident in self.grant.identifiers:
            if ident.index == index:
                return ident
        raise AuthorizationError(f"index {index} is outside the delegated range "
                                 f"[{self.grant.start}, {self.grant.end})")

    def witness(self, index: int, epoch: int) -> LegitimacyWitness:
        ident = self.identifier(index)
        allow_proof, block_proof = self.witnesses[epoch]
        return assemble_witness(ident, compose_delegated_proof(self.grant, index), self.grant.commitment_root,
                                self.bundles[epoch], allow_proof, block_proof)

    def present(self, index: int, *, epoch: Optional[int] = None, context: bytes = b"",
                backend: Optional[ProofBackend] = None, fmt: str = "uuid") -> Presentation:
        epoch = max(self.bundles) if epoch is None else epoch
        return build_presentation(self.identifier(index), self.witness(index, epoch), self.bundles[epoch],
                                  context, backend or DisclosingBackend(), fmt)
