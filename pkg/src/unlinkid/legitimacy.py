"""The identifier-legitimacy relation and its proof backends.

Public statement: ``(id_value, allow_root, block_root, epoch, context_tag)``.
Private witness: the identifier's leaf data, the identity commitment it sits
under, and three proofs (identifier in commitment, commitment in allow tree,
commitment absent from the block tree).

Two backends share one interface:

* :class:`DisclosingBackend` ships the witness as the proof payload and the
  verifier re-runs :func:`relation_holds`. Sound, but it reveals the
  commitment, so it is not zero-knowledge.
* :class:`ExternalZkBackend` is the adapter slot for a succinct proof system.
  It hands the external prover exactly ``(statement_bytes, witness_bytes)``
  and the external verifier ``(statement_bytes, payload)``; the relation the
  circuit must enforce is :func:`relation_holds`.
"""
from __future__ import annotations

import hmac
import struct
from dataclasses import dataclass, replace
from typing import Callable, Optional, Protocol

from .errors import RefusalToProve
from .hashing import DIGEST_SIZE, Digest, Verdict, check_digest, chf
from .merkle import InclusionProof, verify_inclusion
from .portfolio import ID_SIZE, identifier_leaf
from .smt import SmtProof, smt_key, smt_verify

STATEMENT_VERSION = 1
WITNESS_VERSION = 1
MAX_CONTEXT = 1 << 10

BACKEND_DISCLOSING = 1
BACKEND_EXTERNAL_ZK = 2

_ZERO_ATTR = bytes(DIGEST_SIZE)


@dataclass(frozen=True)
class LegitimacyStatement:
    id_value: bytes
    allow_root: Digest
    block_root: Digest
    epoch: int
    context_tag: Optional[bytes] = None

    def __post_init__(self) -> None:
        if len(self.id_value) != ID_SIZE:
            raise ValueError("statement id_value must be 16 bytes")
        check_digest(self.allow_root, "allow_root")
        check_digest(self.block_root, "block_root")
        if self.context_tag is not None and len(self.context_tag) > MAX_CONTEXT:
            raise ValueError(f"context longer than {MAX_CONTEXT} bytes")
        if self.context_tag == b"":
            object.__setattr__(self, "context_tag", None)

    def to_bytes(self) -> bytes:
        ctx = self.context_tag or b""
        return (struct.pack("<B", STATEMENT_VERSION) + self.id_value + self.allow_root + self.block_root
                + struct.pack("<QH", self.epoch, len(ctx)) + ctx)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LegitimacyStatement":
        if len(data) < 91 or data[0] != STATEMENT_VERSION:
            raise ValueError("not a version-1 statement")
        epoch, clen = struct.unpack_from("<QH", data, 81)
        if len(data) != 91 + clen:
            raise ValueError("statement length does not match its context length")
        return cls(bytes(data[1:17]), bytes(data[17:49]), bytes(data[49:81]), epoch, bytes(data[91:]) or None)

    @property
    def digest(self) -> Digest:
        return chf(self.to_bytes())


def bind_context(statement: LegitimacyStatement, context: bytes) -> LegitimacyStatement:
    if len(context) > MAX_CONTEXT:
        raise ValueError(f"context longer than {MAX_CONTEXT} bytes")
    return replace(statement, context_tag=context or None)


@dataclass(frozen=True)
class LegitimacyWitness:
    id_value: bytes
    identity_commitment: Digest
    proof_id_in_I: InclusionProof
    proof_I_in_A: InclusionProof
    proof_I_not_in_B: SmtProof
    attr_commitment: Optional[Digest] = None

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<B", WITNESS_VERSION), self.id_value,
                 b"\x01" + self.attr_commitment if self.attr_commitment else b"\x00",
                 self.identity_commitment]
        for blob in (self.proof_id_in_I.to_bytes(), self.proof_I_in_A.to_bytes(), self.proof_I_not_in_B.to_bytes()):
            parts.append(struct.pack("<I", len(blob)) + blob)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LegitimacyWitness":
        if not data or data[0] != WITNESS_VERSION:
            raise ValueError("not a version-1 witness")
        id_value = bytes(data[1:17])
        off = 17
        attr = None
        if data[off] == 1:
            attr = bytes(data[off + 1: off + 33])
            off += 33
        elif data[off] == 0:
            off += 1
        else:
            raise ValueError("bad attribute flag in witness")
        commitment = bytes(data[off: off + 32])
        off += 32
        blobs = []
        for _ in range(3):
            (n,) = struct.unpack_from("<I", data, off)
            blobs.append(bytes(data[off + 4: off + 4 + n]))
            off += 4 + n
        if off != len(data):
            raise ValueError("trailing bytes after witness")
        return cls(id_value, commitment, InclusionProof.from_bytes(blobs[0]),
                   InclusionProof.from_bytes(blobs[1]), SmtProof.from_bytes(blobs[2]), attr)


def relation_holds(statement: LegitimacyStatement, witness: LegitimacyWitness) -> bool:
    """Every constraint of the legitimacy relation; any failure is a plain reject."""
    if witness.id_value != statement.id_value:
        return False
    if len(witness.identity_commitment) != DIGEST_SIZE:
        return False
    leaf = identifier_leaf(witness.id_value, witness.attr_commitment)
    if not verify_inclusion(witness.identity_commitment, leaf, witness.proof_id_in_I):
        return False
    if not verify_inclusion(statement.allow_root, witness.identity_commitment, witness.proof_I_in_A):
        return False
    block = witness.proof_I_not_in_B
    if block.value or block.key != smt_key(witness.identity_commitment):
        return False
    return bool(smt_verify(statement.block_root, block))


@dataclass(frozen=True)
class LegitimacyProof:
    backend_id: int
    statement_digest: Digest
    payload: bytes

    def to_bytes(self) -> bytes:
        return struct.pack("<B", self.backend_id) + self.statement_digest + struct.pack("<I", len(self.payload)) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "LegitimacyProof":
        if len(data) < 37:
            raise ValueError("proof envelope truncated")
        (n,) = struct.unpack_from("<I", data, 33)
        if len(data) != 37 + n:
            raise ValueError("proof envelope length does not match payload length")
        return cls(data[0], bytes(data[1:33]), bytes(data[37:]))


class ProofBackend(Protocol):
    backend_id: int

    def make_payload(self, statement: LegitimacyStatement, witness: LegitimacyWitness) -> bytes: ...

    def check_payload(self, statement: LegitimacyStatement, payload: bytes) -> bool: ...


class DisclosingBackend:
    """Payload is the serialized witness. Reveals the identity commitment."""

    backend_id = BACKEND_DISCLOSING
    zero_knowledge = False

    def make_payload(self, statement: LegitimacyStatement, witness: LegitimacyWitness) -> bytes:
        return witness.to_bytes()

    def check_payload(self, statement: LegitimacyStatement, payload: bytes) -> bool:
        try:
            witness = LegitimacyWitness.from_bytes(payload)
        except (ValueError, struct.error, IndexError):
            return False
        return relation_holds(statement, witness)


class ExternalZkBackend:
    """Adapter for an external succinct proof system.

    ``prover(statement_bytes, witness_bytes) -> payload`` and
    ``verifier(statement_bytes, payload) -> bool`` are supplied by the
    integration. Without them the backend refuses to operate.
    """

    backend_id = BACKEND_EXTERNAL_ZK
    zero_knowledge = True

    def __init__(self, prover: Optional[Callable[[bytes, bytes], bytes]] = None,
                 verifier: Optional[Callable[[bytes, bytes], bool]] = None):
        self.prover = prover
        self.verifier = verifier

    def make_payload(self, statement: LegitimacyStatement, witness: LegitimacyWitness) -> bytes:
        if self.prover is None:
            raise NotImplementedError("no external prover is attached to this backend")
        return self.prover(statement.to_bytes(), witness.to_bytes())

    def check_payload(self, statement: LegitimacyStatement, payload: bytes) -> bool:
        if self.verifier is None:
            raise NotImplementedError("no external verifier is attached to this backend")
        return bool(self.verifier(statement.to_bytes(), payload))


def simulated_zk_backend(key: bytes) -> ExternalZkBackend:
    """A stand-in external backend for harnesses: a keyed attestation, NOT a ZK proof.

    The prover side runs :func:`relation_holds` and emits an HMAC over the
    statement; anyone holding ``key`` can verify. It reveals nothing about the
    witness, which is what the transcript-hygiene harnesses need, but its
    soundness rests entirely on keeping ``key`` away from provers.
    """

    def prover(statement_bytes: bytes, witness_bytes: bytes) -> bytes:
        statement = LegitimacyStatement.from_bytes(statement_bytes)
        if not relation_holds(statement, LegitimacyWitness.from_bytes(witness_bytes)):
            raise RefusalToProve("relation does not hold")
        return hmac.digest(key, statement_bytes, "sha256")

    def verifier(statement_bytes: bytes, payload: bytes) -> bool:
        return hmac.compare_digest(hmac.digest(key, statement_bytes, "sha256"), payload)

    return ExternalZkBackend(prover, verifier)


def prove(backend: ProofBackend, statement: LegitimacyStatement, witness: LegitimacyWitness) -> LegitimacyProof:
    if not relation_holds(statement, witness):
        raise RefusalToProve("witness does not satisfy the legitimacy relation for this statement")
    return LegitimacyProof(backend.backend_id, statement.digest, backend.make_payload(statement, witness))


def verify(backend: ProofBackend, proof: LegitimacyProof, statement: LegitimacyStatement) -> Verdict:
    if proof.backend_id != backend.backend_id:
        return Verdict.INCOMPATIBLE_BACKEND
    if not hmac.compare_digest(proof.statement_digest, statement.digest):
        return Verdict.REJECT
    return Verdict.ACCEPT if backend.check_payload(statement, proof.payload) else Verdict.REJECT
