"""Offline relying-party verification.

:func:`rp_verify` is a pure function of its arguments: it never contacts the
coordinator. Freshness comes from the verifier's own epoch estimate.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .coordinator import RootBundle
from .legitimacy import (
    BACKEND_DISCLOSING,
    DisclosingBackend,
    LegitimacyProof,
    LegitimacyStatement,
    ProofBackend,
    verify,
)
from .portfolio import display_matches


class RejectReason(enum.Enum):
    BAD_SIGNATURE = "bad_signature"
    STALE_EPOCH = "stale_epoch"
    ROOT_MISMATCH = "root_mismatch"
    ID_MISMATCH = "id_mismatch"
    BACKEND_NOT_ACCEPTED = "backend_not_accepted"
    PROOF_INVALID = "proof_invalid"


@dataclass(frozen=True)
class VerifierConfig:
    trusted_coordinator_key: bytes
    max_epoch_staleness: int = 1
    accepted_backends: frozenset[int] = frozenset({BACKEND_DISCLOSING})
    backends: Mapping[int, ProofBackend] = field(
        default_factory=lambda: {BACKEND_DISCLOSING: DisclosingBackend()})

    def __post_init__(self) -> None:
        if self.max_epoch_staleness < 0:
            raise ValueError("max_epoch_staleness must be non-negative")


@dataclass(frozen=True)
class VerifyResult:
    accepted: bool
    reason: Optional[RejectReason] = None

    def __bool__(self) -> bool:
        return self.accepted

    def __str__(self) -> str:
        return "accept" if self.accepted else f"reject:{self.reason.value}"


def _reject(reason: RejectReason) -> VerifyResult:
    return VerifyResult(False, reason)


def rp_verify(config: VerifierConfig, display: str, proof: LegitimacyProof,
              statement: LegitimacyStatement, bundle: RootBundle,
              current_epoch_estimate: int) -> VerifyResult:
    if not bundle.verify_signature(config.trusted_coordinator_key):
        return _reject(RejectReason.BAD_SIGNATURE)
    if current_epoch_estimate - bundle.epoch > config.max_epoch_staleness:
        return _reject(RejectReason.STALE_EPOCH)
    if (statement.allow_root != bundle.allow_root or statement.block_root != bundle.block_root
            or statement.epoch != bundle.epoch):
        return _reject(RejectReason.ROOT_MISMATCH)
    if not display_matches(display, statement.id_value):
        return _reject(RejectReason.ID_MISMATCH)
    backend = config.backends.get(proof.backend_id)
    if proof.backend_id not in config.accepted_backends or backend is None:
        return _reject(RejectReason.BACKEND_NOT_ACCEPTED)
    if not verify(backend, proof, statement):
        return _reject(RejectReason.PROOF_INVALID)
    return VerifyResult(True)
