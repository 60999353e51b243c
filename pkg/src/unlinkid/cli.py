"""Command-line entry point.

Exit codes: 0 success, 1 verification reject or refused operation,
2 usage error, 3 internal error.
"""
from __future__ import annotations

import argparse
import logging
import os
import secrets
import sys
from pathlib import Path
from typing import Optional, Sequence

from .adversary import REGIMES, run_linkage_adversary
from .coordinator import PUBKEY_NAME, Coordinator, RootBundle, replay_audit
from .errors import UnlinkidError
from .keystore import Keystore
from .legitimacy import LegitimacyProof, LegitimacyStatement
from .participant import MODES, Participant, SelectionPolicy
from .portfolio import (
    DEFAULT_LABEL,
    ID_FORMATS,
    PortfolioSecret,
    bind_authenticator,
    derive_portfolio,
    generate_random_portfolio,
    seed_from_uli,
)
from .scenario import ScenarioError, load_script, run_scenario
from .service import CoordinatorService, HttpCoordinatorClient, make_server
from .verifier import VerifierConfig, rp_verify

log = logging.getLogger("unlinkid")

EXIT_OK, EXIT_REJECT, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _passphrase(args) -> str:
    value = args.passphrase or os.environ.get("UNLINKID_PASSPHRASE")
    if not value:
        raise UsageError("a keystore passphrase is required (--passphrase or UNLINKID_PASSPHRASE)")
    return value


def _keystore(args) -> Keystore:
    return Keystore(args.keystore, _passphrase(args), log2_n=args.kdf_log2_n)


def _coordinator_client(args):
    if getattr(args, "url", None):
        return HttpCoordinatorClient(args.url)
    if getattr(args, "state", None):
        return Coordinator(args.state)
    raise UsageError("name a coordinator with --state DIR or --url URL")


def _open_coordinator(args) -> Coordinator:
    return Coordinator(args.state, smt_depth=args.smt_depth)


def _hex32(text: str) -> bytes:
    try:
        value = bytes.fromhex(text)
    except ValueError:
        raise UsageError(f"not hex: {text!r}") from None
    if len(value) != 32:
        raise UsageError("expected 32 bytes (64 hex characters)")
    return value


# -- participant -------------------------------------------------------------

def cmd_participant_init(args) -> int:
    store = _keystore(args)
    if store.exists("portfolio.bin"):
        raise UsageError(f"{args.keystore} already holds a portfolio")
    label = args.label.encode() if args.label else DEFAULT_LABEL
    if args.uli is not None:
        if not args.salt:
            raise UsageError("--uli needs --salt (hex, at least 16 bytes)")
        secret = PortfolioSecret(seed_from_uli(args.uli, bytes.fromhex(args.salt)), label)
    elif args.seed:
        secret = PortfolioSecret(_hex32(args.seed), label)
    elif args.random:
        secret = None
    else:
        secret = PortfolioSecret(secrets.token_bytes(32), label)
    ids = derive_portfolio(secret, args.size) if secret else generate_random_portfolio(args.size)
    key = Path(args.coordinator_key).read_bytes() if args.coordinator_key else None
    if key is not None and len(key) != 32:
        raise UsageError("coordinator key file must hold a raw 32-byte Ed25519 public key")
    p = Participant(ids, SelectionPolicy(args.policy), secret=secret, coordinator_key=key,
                    display_format=args.format, digits=args.digits)
    p.save(store)
    print(p.commitment.root.hex())
    return EXIT_OK


def cmd_participant_derive(args) -> int:
    store = _keystore(args)
    p = Participant.load(store)
    before = p.commitment.root
    p.extend(args.size)
    p.save(store)
    print(p.commitment.root.hex())
    if p.commitment.root != before:
        print("portfolio extended; register the new commitment", file=sys.stderr)
    return EXIT_OK


def cmd_participant_commit(args) -> int:
    p = Participant.load(_keystore(args))
    print(p.commitment.root.hex())
    if args.authenticator:
        bound = bind_authenticator(p.commitment, Path(args.authenticator).read_bytes())
        print(bound.bound_root.hex())
    return EXIT_OK


def cmd_participant_register(args) -> int:
    p = Participant.load(_keystore(args))
    receipt = p.register(_coordinator_client(args))
    print(f"registered {p.commitment.root.hex()} effective at epoch {receipt['epoch_effective']}")
    return EXIT_OK


def cmd_participant_sync(args) -> int:
    store = _keystore(args)
    p = Participant.load(store)
    bundle = p.sync(_coordinator_client(args), args.epoch)
    p.save(store)
    print(f"synced epoch {bundle.epoch}")
    return EXIT_OK


def cmd_participant_present(args) -> int:
    store = _keystore(args)
    p = Participant.load(store)
    pres = p.present(args.rp, epoch=args.epoch, context=(args.context or "").encode())
    p.save(store)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bundle.bin").write_bytes(pres.bundle.to_bytes())
    (out / "statement.bin").write_bytes(pres.statement.to_bytes())
    (out / "proof.bin").write_bytes(pres.proof.to_bytes())
    (out / "id.txt").write_text(pres.display + "\n", encoding="utf-8")
    print(pres.display)
    return EXIT_OK


def cmd_participant_delegate(args) -> int:
    p = Participant.load(_keystore(args))
    grant = p.delegate(args.start, args.end)
    Path(args.out).write_bytes(grant.to_bytes())
    print(f"delegated [{grant.start}, {grant.end}) under subtree {grant.subtree_root.hex()}")
    return EXIT_OK


# -- coordinator ---------------------------------------------------------------

def cmd_coordinator_serve(args) -> int:
    coord = _open_coordinator(args)
    server = make_server(CoordinatorService(coord), args.host, args.port)
    host, port = server.server_address[:2]
    print(f"serving coordinator at http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_coordinator_register(args) -> int:
    receipt = _open_coordinator(args).register_commitment(_hex32(args.commitment))
    print(f"epoch_effective={receipt['epoch_effective']}")
    return EXIT_OK


def cmd_coordinator_revoke(args) -> int:
    receipt = _open_coordinator(args).revoke_commitment(_hex32(args.commitment))
    print(f"epoch_effective={receipt['epoch_effective']}")
    return EXIT_OK


def cmd_coordinator_publish(args) -> int:
    bundle = _open_coordinator(args).publish_epoch()
    if args.out:
        Path(args.out).write_bytes(bundle.to_bytes())
    print(f"epoch={bundle.epoch} allow_root={bundle.allow_root.hex()} block_root={bundle.block_root.hex()}")
    return EXIT_OK


def cmd_coordinator_witness(args) -> int:
    allow_proof, block_proof = _open_coordinator(args).membership_witness(_hex32(args.commitment), args.epoch)
    print(f"allow_proof={allow_proof.hex()}")
    print(f"block_proof={block_proof.hex()}")
    return EXIT_OK


def cmd_coordinator_bundle(args) -> int:
    bundle = _open_coordinator(args).fetch_bundle(args.epoch)
    if args.out:
        Path(args.out).write_bytes(bundle.to_bytes())
    print(bundle.to_bytes().hex())
    return EXIT_OK


def cmd_coordinator_audit(args) -> int:
    coord = _open_coordinator(args)
    lines = coord.audit_export()
    if args.replay:
        published = {b.epoch: b for b in (coord.fetch_bundle(e) for e in range(1, coord.epoch + 1))}
        for epoch, allow, block in replay_audit(lines):
            b = published[epoch]
            status = "ok" if (b.allow_root, b.block_root) == (allow, block) else "MISMATCH"
            print(f"epoch={epoch} allow_root={allow.hex()} block_root={block.hex()} {status}")
            if status != "ok":
                return EXIT_REJECT
        return EXIT_OK
    for line in lines:
        print(line)
    return EXIT_OK


# -- relying party -------------------------------------------------------------

def _default_key_path() -> Optional[str]:
    env = os.environ.get("UNLINKID_COORDINATOR_KEY")
    if env:
        return env
    return PUBKEY_NAME if Path(PUBKEY_NAME).exists() else None


def cmd_rp_verify(args) -> int:
    key_path = args.coordinator_key or _default_key_path()
    if key_path is None:
        raise UsageError("--coordinator-key is required (or set UNLINKID_COORDINATOR_KEY)")
    bundle = RootBundle.from_bytes(Path(args.bundle).read_bytes())
    statement = LegitimacyStatement.from_bytes(Path(args.statement).read_bytes())
    proof = LegitimacyProof.from_bytes(Path(args.proof).read_bytes())
    config = VerifierConfig(Path(key_path).read_bytes(), args.max_stale)
    current = args.current_epoch if args.current_epoch is not None else bundle.epoch
    result = rp_verify(config, args.id, proof, statement, bundle, current)
    print(result)
    return EXIT_OK if result else EXIT_REJECT


# -- harnesses -----------------------------------------------------------------

def cmd_scenario_run(args) -> int:
    result = run_scenario(load_script(args.script), args.seed, args.out)
    sys.stdout.write(result.transcript_text)
    print(f"# scenario {result.name} seed={args.seed} transcript_sha256={result.transcript_hash} "
          f"{'PASS' if result.passed else 'FAIL'}")
    for failure in result.failures:
        print(f"# {failure}", file=sys.stderr)
    return EXIT_OK if result.passed else EXIT_REJECT


def cmd_adversary_run(args) -> int:
    report = run_linkage_adversary(args.regime, args.services, args.users, args.interactions, args.seed)
    sys.stdout.write(report.render())
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unlinkid", description="Unlinkable identifier toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    roles = parser.add_subparsers(dest="role", required=True)

    ks = argparse.ArgumentParser(add_help=False)
    ks.add_argument("--keystore", required=True)
    ks.add_argument("--passphrase")
    ks.add_argument("--kdf-log2-n", type=int, default=14, help=argparse.SUPPRESS)

    remote = argparse.ArgumentParser(add_help=False)
    remote.add_argument("--state", help="local coordinator state directory")
    remote.add_argument("--url", help="coordinator service URL")

    part = roles.add_parser("participant").add_subparsers(dest="command", required=True)
    p = part.add_parser("init", parents=[ks], help="create a keystore with a new portfolio")
    p.add_argument("--size", type=_positive, default=64)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--seed", help="32-byte hex seed for deterministic derivation")
    src.add_argument("--uli", help="legacy identifier to migrate from (needs --salt)")
    src.add_argument("--random", action="store_true", help="independent random identifiers, no seed kept")
    p.add_argument("--salt", help="hex salt for --uli")
    p.add_argument("--label", help="derivation label")
    p.add_argument("--policy", choices=MODES, default="per_interaction")
    p.add_argument("--format", choices=ID_FORMATS, default="uuid")
    p.add_argument("--digits", type=int, default=9)
    p.add_argument("--coordinator-key", help="coordinator public key file")
    p.set_defaults(func=cmd_participant_init)
    p = part.add_parser("derive", parents=[ks], help="extend a seed-derived portfolio")
    p.add_argument("--size", type=_positive, required=True)
    p.set_defaults(func=cmd_participant_derive)
    p = part.add_parser("commit", parents=[ks], help="print the identity commitment")
    p.add_argument("--authenticator", help="file whose bytes are bound to the commitment")
    p.set_defaults(func=cmd_participant_commit)
    p = part.add_parser("register", parents=[ks, remote])
    p.set_defaults(func=cmd_participant_register)
    p = part.add_parser("sync", parents=[ks, remote], help="fetch bundle and membership witness")
    p.add_argument("--epoch", type=int)
    p.set_defaults(func=cmd_participant_sync)
    p = part.add_parser("present", parents=[ks], help="select an identifier and prove it offline")
    p.add_argument("--rp", required=True, help="relying-party label")
    p.add_argument("--context")
    p.add_argument("--epoch", type=int)
    p.add_argument("--out", required=True, help="directory for bundle.bin, statement.bin, proof.bin")
    p.set_defaults(func=cmd_participant_present)
    p = part.add_parser("delegate", parents=[ks])
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--end", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_participant_delegate)

    state = argparse.ArgumentParser(add_help=False)
    state.add_argument("--state", required=True)
    state.add_argument("--smt-depth", type=int, default=256, help="only used when creating a new state dir")

    coord = roles.add_parser("coordinator").add_subparsers(dest="command", required=True)
    c = coord.add_parser("serve", parents=[state])
    c.add_argument("--host", default="127.0.0.1")
    c.add_argument("--port", type=int, default=8700)
    c.set_defaults(func=cmd_coordinator_serve)
    for name, func in (("register", cmd_coordinator_register), ("revoke", cmd_coordinator_revoke)):
        c = coord.add_parser(name, parents=[state])
        c.add_argument("--commitment", required=True)
        c.set_defaults(func=func)
    c = coord.add_parser("publish", parents=[state])
    c.add_argument("--out")
    c.set_defaults(func=cmd_coordinator_publish)
    c = coord.add_parser("bundle", parents=[state])
    c.add_argument("--epoch", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_coordinator_bundle)
    c = coord.add_parser("witness", parents=[state])
    c.add_argument("--commitment", required=True)
    c.add_argument("--epoch", type=int)
    c.set_defaults(func=cmd_coordinator_witness)
    c = coord.add_parser("audit", parents=[state])
    c.add_argument("--replay", action="store_true", help="recompute every published root pair from the log")
    c.set_defaults(func=cmd_coordinator_audit)

    rp = roles.add_parser("rp").add_subparsers(dest="command", required=True)
    r = rp.add_parser("verify")
    r.add_argument("--bundle", required=True)
    r.add_argument("--statement", required=True)
    r.add_argument("--proof", required=True)
    r.add_argument("--id", required=True, help="identifier as presented")
    r.add_argument("--max-stale", type=int, default=1)
    r.add_argument("--current-epoch", type=int, help="verifier's epoch estimate (default: bundle epoch)")
    r.add_argument("--coordinator-key", help="coordinator public key file")
    r.set_defaults(func=cmd_rp_verify)

    sc = roles.add_parser("scenario").add_subparsers(dest="command", required=True)
    s = sc.add_parser("run")
    s.add_argument("script", help="scenario file, or the name of a bundled script")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="directory for transcript files")
    s.set_defaults(func=cmd_scenario_run)

    adv = roles.add_parser("adversary").add_subparsers(dest="command", required=True)
    a = adv.add_parser("run")
    a.add_argument("--regime", choices=REGIMES, required=True)
    a.add_argument("--services", type=_positive, default=5)
    a.add_argument("--users", type=_positive, default=100)
    a.add_argument("--interactions", type=_positive, default=20)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_adversary_run)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ScenarioError, FileNotFoundError) as exc:
        print(f"unlinkid: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnlinkidError as exc:
        print(f"unlinkid: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_REJECT
    except ValueError as exc:
        print(f"unlinkid: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
