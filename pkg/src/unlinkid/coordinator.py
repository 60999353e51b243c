"""Coordinator registry: allow list, revocation tree, and signed root bundles.

The coordinator only ever handles identity-commitment digests. All state
changes go through an append-only audit log (newline-delimited JSON); the
log alone is enough to rebuild every published root pair.

Durability: each record is appended and fsynced before the in-memory state
changes, so a crash at any point either loses the whole operation or keeps
it. A periodic snapshot shortens recovery; the log tail after the snapshot is
replayed on open.
"""
from __future__ import annotations

import json
import logging
import os
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .errors import DuplicateError, NotFoundError, PersistenceError
from .hashing import DIGEST_SIZE, EMPTY_DIGEST, Digest, check_digest
from .merkle import InclusionProof, MerkleTree, build_tree, prove_inclusion
from .smt import DEFAULT_DEPTH, SmtProof, SparseMerkleTree, smt_key

log = logging.getLogger(__name__)

SIGNATURE_SIZE = 64
LOG_NAME = "audit.log"
SNAPSHOT_NAME = "snapshot.json"
KEY_NAME = "coordinator.key"
PUBKEY_NAME = "coordinator.pub"


@dataclass(frozen=True)
class RootBundle:
    epoch: int
    allow_root: Digest
    block_root: Digest
    issued_at: int
    signature: bytes = b""

    def signed_body(self) -> bytes:
        return struct.pack("<Q", self.epoch) + self.allow_root + self.block_root + struct.pack("<Q", self.issued_at)

    def to_bytes(self) -> bytes:
        return self.signed_body() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "RootBundle":
        if len(data) != 80 + SIGNATURE_SIZE:
            raise ValueError(f"bundle must be {80 + SIGNATURE_SIZE} bytes, got {len(data)}")
        (epoch,) = struct.unpack_from("<Q", data, 0)
        (issued_at,) = struct.unpack_from("<Q", data, 72)
        return cls(epoch, bytes(data[8:40]), bytes(data[40:72]), issued_at, bytes(data[80:]))

    def verify_signature(self, public_key: bytes | Ed25519PublicKey) -> bool:
        if not isinstance(public_key, Ed25519PublicKey):
            public_key = Ed25519PublicKey.from_public_bytes(public_key)
        try:
            public_key.verify(self.signature, self.signed_body())
        except InvalidSignature:
            return False
        return True

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "allow_root": self.allow_root.hex(),
            "block_root": self.block_root.hex(),
            "issued_at": self.issued_at,
            "signature": self.signature.hex(),
            "encoding": self.to_bytes().hex(),
        }


def allow_tree(commitments: list[Digest]) -> MerkleTree:
    # an empty registry is the one-leaf tree over the empty digest
    return build_tree(commitments or [EMPTY_DIGEST])


def _raw_public(key: Ed25519PrivateKey) -> bytes:
    from cryptography.hazmat.primitives import serialization

    return key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def _raw_private(key: Ed25519PrivateKey) -> bytes:
    from cryptography.hazmat.primitives import serialization

    return key.private_bytes(serialization.Encoding.Raw, serialization.PrivateFormat.Raw,
                             serialization.NoEncryption())


class Coordinator:
    """Single-writer registry. Readers only touch published, immutable values.

    ``fault_hook`` is called with ``"before_persist"`` and ``"after_persist"``
    around the durable write inside :meth:`publish_epoch`; tests raise from it
    to simulate a crash.
    """

    def __init__(self, state_dir: str | os.PathLike | None = None, *,
                 signing_key: Optional[Ed25519PrivateKey] = None,
                 smt_depth: int = DEFAULT_DEPTH,
                 clock: Callable[[], int] = lambda: int(time.time()),
                 snapshot_every: int = 16,
                 fault_hook: Optional[Callable[[str], None]] = None):
        self.state_dir = Path(state_dir) if state_dir is not None else None
        self.clock = clock
        self.snapshot_every = snapshot_every
        self.fault_hook = fault_hook
        self._lock = threading.RLock()
        self._reset(smt_depth)

        if self.state_dir is not None and (self.state_dir / LOG_NAME).exists():
            self._signing_key = Ed25519PrivateKey.from_private_bytes((self.state_dir / KEY_NAME).read_bytes())
            self._recover()
            return

        self._signing_key = signing_key or Ed25519PrivateKey.generate()
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            (self.state_dir / KEY_NAME).write_bytes(_raw_private(self._signing_key))
            os.chmod(self.state_dir / KEY_NAME, 0o600)
            (self.state_dir / PUBKEY_NAME).write_bytes(self.public_key)
        self._commit({"seq": 0, "epoch": 0, "action": "genesis", "commitment": None,
                      "smt_depth": smt_depth, "public_key": self.public_key.hex()})

    def _reset(self, smt_depth: int) -> None:
        self.smt_depth = smt_depth
        self.epoch = 0
        self._commitments: list[Digest] = []
        self._position: dict[Digest, int] = {}
        self._registered: dict[Digest, int] = {}  # commitment -> effective epoch
        self._revoked: dict[Digest, int] = {}
        self._pending_register: list[Digest] = []
        self._pending_revoke: list[Digest] = []
        self._allow = allow_tree([])
        self._smt = SparseMerkleTree(smt_depth)
        self._bundles: list[RootBundle] = []
        self._audit: list[dict] = []
        self._history: dict[int, tuple[MerkleTree, SparseMerkleTree]] = {}

    @property
    def public_key(self) -> bytes:
        return _raw_public(self._signing_key)

    # -- persistence ---------------------------------------------------------

    def _append(self, record: dict) -> None:
        if self.state_dir is None:
            return
        line = json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
        path = self.state_dir / LOG_NAME
        size = path.stat().st_size if path.exists() else 0
        try:
            with open(path, "ab") as fh:
                fh.write(line.encode("utf-8"))
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            # a record that is not durable must not survive to be replayed
            try:
                os.truncate(path, size)
            except OSError:
                log.error("could not roll back partial audit append")
            raise PersistenceError(f"could not append to audit log: {exc}") from exc

    def _commit(self, record: dict) -> None:
        self._append(record)
        self._apply(record)

    def _apply(self, record: dict) -> None:
        action = record["action"]
        if action == "genesis":
            self._reset(record["smt_depth"])
        elif action == "register":
            c = bytes.fromhex(record["commitment"])
            self._pending_register.append(c)
            self._registered[c] = record["epoch"]
        elif action == "revoke":
            c = bytes.fromhex(record["commitment"])
            if c not in self._revoked and c not in self._pending_revoke:
                self._pending_revoke.append(c)
        elif action == "publish":
            self._fold_pending(record)
        else:
            raise ValueError(f"unknown audit action {action!r}")
        self._audit.append(record)

    def _fold_pending(self, record: dict) -> None:
        epoch = record["epoch"]
        for c in self._pending_register:
            self._position[c] = len(self._commitments)
            self._commitments.append(c)
        smt = self._smt
        for c in self._pending_revoke:
            smt = smt.set(smt_key(c), True)
            self._revoked[c] = epoch
        tree = allow_tree(self._commitments)
        bundle = RootBundle(epoch, tree.root, smt.root, record["issued_at"], bytes.fromhex(record["signature"]))
        if bundle.allow_root.hex() != record["allow_root"] or bundle.block_root.hex() != record["block_root"]:
            raise PersistenceError(f"audit log publish record for epoch {epoch} does not match replayed roots")
        self._pending_register = []
        self._pending_revoke = []
        self._allow, self._smt = tree, smt
        self._bundles.append(bundle)
        self.epoch = epoch

    def _snapshot(self) -> None:
        if self.state_dir is None:
            return
        snap = {
            "audit_records": len(self._audit),
            "epoch": self.epoch,
            "smt_depth": self.smt_depth,
            "commitments": [c.hex() for c in self._commitments],
            "registered": [[c.hex(), e] for c, e in self._registered.items()],
            "revoked": [[c.hex(), e] for c, e in self._revoked.items()],
            "pending_register": [c.hex() for c in self._pending_register],
            "pending_revoke": [c.hex() for c in self._pending_revoke],
            "bundles": [b.to_bytes().hex() for b in self._bundles],
        }
        tmp = self.state_dir / (SNAPSHOT_NAME + ".tmp")
        tmp.write_text(json.dumps(snap, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.state_dir / SNAPSHOT_NAME)

    def _recover(self) -> None:
        path = self.state_dir / LOG_NAME
        raw = path.read_bytes()
        if raw and not raw.endswith(b"\n"):
            # drop the torn tail so later appends start on a fresh line
            with open(path, "r+b") as fh:
                fh.truncate(raw.rfind(b"\n") + 1)
                os.fsync(fh.fileno())
        records = list(read_audit_log(path))
        start = 0
        snap_path = self.state_dir / SNAPSHOT_NAME
        if snap_path.exists():
            snap = json.loads(snap_path.read_text(encoding="utf-8"))
            if snap["audit_records"] <= len(records):
                self._reset(snap["smt_depth"])
                self.epoch = snap["epoch"]
                self._commitments = [bytes.fromhex(c) for c in snap["commitments"]]
                self._position = {c: i for i, c in enumerate(self._commitments)}
                self._registered = {bytes.fromhex(c): e for c, e in snap["registered"]}
                self._revoked = {bytes.fromhex(c): e for c, e in snap["revoked"]}
                self._pending_register = [bytes.fromhex(c) for c in snap["pending_register"]]
                self._pending_revoke = [bytes.fromhex(c) for c in snap["pending_revoke"]]
                self._bundles = [RootBundle.from_bytes(bytes.fromhex(b)) for b in snap["bundles"]]
                self._allow = allow_tree(self._commitments)
                self._smt = SparseMerkleTree.from_keys([smt_key(c) for c in self._revoked], self.smt_depth)
                self._audit = records[: snap["audit_records"]]
                start = snap["audit_records"]
        for record in records[start:]:
            self._apply(record)
        log.info("recovered coordinator at epoch %d from %d audit records", self.epoch, len(records))

    # -- writer operations ---------------------------------------------------

    def register_commitment(self, commitment: Digest) -> dict:
        commitment = check_digest(commitment, "commitment")
        if commitment == EMPTY_DIGEST:
            raise ValueError("the empty digest cannot be registered")
        with self._lock:
            if commitment in self._registered:
                raise DuplicateError(f"commitment {commitment.hex()} is already registered")
            record = {"seq": len(self._audit), "epoch": self.epoch + 1, "action": "register",
                      "commitment": commitment.hex()}
            self._commit(record)
            return {"epoch_effective": self.epoch + 1}

    def revoke_commitment(self, commitment: Digest) -> dict:
        """Revoke permanently; repeated revocations succeed and are logged."""
        commitment = check_digest(commitment, "commitment")
        with self._lock:
            if commitment not in self._registered:
                raise NotFoundError(f"commitment {commitment.hex()} is not registered")
            effective = self._revoked.get(commitment, self.epoch + 1)
            record = {"seq": len(self._audit), "epoch": effective, "action": "revoke",
                      "commitment": commitment.hex()}
            self._commit(record)
            return {"epoch_effective": effective}

    def publish_epoch(self) -> RootBundle:
        with self._lock:
            epoch = self.epoch + 1
            commitments = self._commitments + self._pending_register
            smt = self._smt
            for c in self._pending_revoke:
                smt = smt.set(smt_key(c), True)
            unsigned = RootBundle(epoch, allow_tree(commitments).root, smt.root, int(self.clock()))
            bundle = RootBundle(unsigned.epoch, unsigned.allow_root, unsigned.block_root,
                                unsigned.issued_at, self._signing_key.sign(unsigned.signed_body()))
            record = {"seq": len(self._audit), "epoch": epoch, "action": "publish", "commitment": None,
                      "allow_root": bundle.allow_root.hex(), "block_root": bundle.block_root.hex(),
                      "issued_at": bundle.issued_at, "signature": bundle.signature.hex()}
            if self.fault_hook:
                self.fault_hook("before_persist")
            self._append(record)
            if self.fault_hook:
                self.fault_hook("after_persist")
            self._apply(record)
            if self.snapshot_every and epoch % self.snapshot_every == 0:
                self._snapshot()
            return bundle

    # -- reader operations ---------------------------------------------------

    @property
    def current_bundle(self) -> Optional[RootBundle]:
        return self._bundles[-1] if self._bundles else None

    def fetch_bundle(self, epoch: Optional[int] = None) -> RootBundle:
        bundles = self._bundles
        if epoch is None:
            if not bundles:
                raise NotFoundError("no bundle has been published yet")
            return bundles[-1]
        if not 1 <= epoch <= len(bundles):
            raise NotFoundError(f"no bundle for epoch {epoch}")
        return bundles[epoch - 1]

    def _trees_at(self, epoch: int) -> tuple[MerkleTree, SparseMerkleTree]:
        if epoch == self.epoch:
            return self._allow, self._smt
        if epoch not in self._history:
            commitments = [c for c in self._commitments if self._registered[c] <= epoch]
            revoked = [smt_key(c) for c, e in self._revoked.items() if e <= epoch]
            self._history[epoch] = (allow_tree(commitments),
                                    SparseMerkleTree.from_keys(revoked, self.smt_depth))
        return self._history[epoch]

    def membership_witness(self, commitment: Digest, epoch: Optional[int] = None) -> tuple[InclusionProof, SmtProof]:
        commitment = check_digest(commitment, "commitment")
        with self._lock:
            bundle = self.fetch_bundle(epoch)
            effective = self._registered.get(commitment)
            if effective is None or effective > bundle.epoch:
                raise NotFoundError(f"commitment {commitment.hex()} is not registered at epoch {bundle.epoch}")
            tree, smt = self._trees_at(bundle.epoch)
            # historical allow trees are prefixes of the current commitment list
            return prove_inclusion(tree, self._position[commitment]), smt.prove(smt_key(commitment))

    def audit_export(self) -> list[str]:
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self._audit]

    def registered(self) -> list[Digest]:
        return list(self._registered)

    def revoked(self) -> list[Digest]:
        return list(self._revoked)


def read_audit_log(path: str | os.PathLike) -> Iterable[dict]:
    """Records of an audit log file; a torn final line from a crash is dropped."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    for i, line in enumerate(lines):
        if not line:
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                log.warning("dropping torn trailing audit record")
                return
            raise PersistenceError(f"corrupt audit record on line {i + 1}")


def replay_audit(lines: Iterable[str]) -> list[tuple[int, Digest, Digest]]:
    """Recompute every published (epoch, allow_root, block_root) from an audit stream.

    Independent of :class:`Coordinator`: uses plain lists and sets.
    """
    commitments: list[Digest] = []
    pending: list[Digest] = []
    revoked: set[Digest] = set()
    pending_revoke: set[Digest] = set()
    depth = DEFAULT_DEPTH
    out = []
    for line in lines:
        if isinstance(line, str) and not line.strip():
            continue
        record = json.loads(line) if isinstance(line, str) else line
        action = record["action"]
        if action == "genesis":
            depth = record["smt_depth"]
        elif action == "register":
            pending.append(bytes.fromhex(record["commitment"]))
        elif action == "revoke":
            pending_revoke.add(bytes.fromhex(record["commitment"]))
        elif action == "publish":
            commitments += pending
            pending = []
            revoked |= pending_revoke
            pending_revoke = set()
            allow = allow_tree(commitments).root
            block = SparseMerkleTree.from_keys(sorted(smt_key(c) for c in revoked), depth).root
            out.append((record["epoch"], allow, block))
    return out


def signing_key_from_seed(seed: bytes) -> Ed25519PrivateKey:
    if len(seed) != DIGEST_SIZE:
        raise ValueError("signing seed must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(seed)
