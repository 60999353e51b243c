"""Line-oriented scenario scripts run against in-process actors.

Format (UTF-8, ``#`` starts a comment)::

    scenario v1 name=sanctions backend=simulated_zk
    declare coordinator ofac
    declare participant alice size=4 policy=per_interaction
    declare verifier bank max_stale=1
    alice register
    ofac publish
    alice sync
    alice present to=bank context=kyc-1
    bank verify expect=accept

Every step may carry ``expect=``; without it a step must succeed (``ok``,
or ``accept`` for ``verify``). Outcomes are ``ok``, ``accept``,
``reject:<reason>``, ``error:<code>``, or a harness value.

All randomness (portfolio seeds, coordinator key, backend key, timestamps)
is derived from the run seed, so a (script, seed) pair always produces the
same transcript.
"""
from __future__ import annotations

import hashlib
import shlex
import struct
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Optional

from .coordinator import Coordinator, signing_key_from_seed
from .errors import (
    AuthorizationError,
    DuplicateError,
    NotFoundError,
    PortfolioExhausted,
    RefusalToProve,
    StaleWitnessError,
    UnlinkidError,
)
from .legitimacy import DisclosingBackend, simulated_zk_backend
from .participant import MODES, Participant, Presentation, SelectionPolicy, Surrogate
from .portfolio import PortfolioSecret, derive_portfolio
from .verifier import VerifierConfig, rp_verify

SCRIPT_VERSION = "v1"
BACKENDS = ("simulated_zk", "disclosing")
BUNDLE_FIELDS = frozenset({"allow_root", "block_root", "epoch"})

KINDS = {
    "coordinator": {"smt_depth"},
    "participant": {"size", "policy", "format"},
    "surrogate": set(),
    "verifier": {"max_stale"},
}
VERBS = {
    "coordinator": {"publish": set(), "revoke": {"who"}},
    "participant": {"register": set(), "sync": {"epoch"}, "present": {"to", "context", "epoch", "label"},
                    "delegate": {"to", "start", "end"}},
    "surrogate": {"sync": {"epoch"}, "present": {"to", "index", "context", "epoch"}},
    "verifier": {"verify": {"at_epoch"}},
    "harness": {"distinct_ids": {"at"}, "intersection": {"at"}},
}
_ERROR_CODES = [
    (RefusalToProve, "refused"),
    (StaleWitnessError, "stale_witness"),
    (PortfolioExhausted, "exhausted"),
    (NotFoundError, "not_found"),
    (DuplicateError, "duplicate"),
    (AuthorizationError, "unauthorized"),
]


class ScenarioError(UnlinkidError, ValueError):
    """Script is malformed or references undeclared actors."""


@dataclass(frozen=True)
class Step:
    index: int
    line: int
    actor: str
    verb: str
    params: dict

    @property
    def expect(self) -> Optional[str]:
        return self.params.get("expect")


@dataclass
class ScenarioScript:
    name: str
    backend: str = "simulated_zk"
    actors: dict[str, tuple[str, dict]] = field(default_factory=dict)
    steps: list[Step] = field(default_factory=list)

    @property
    def expected_outcomes(self) -> list[tuple[int, str]]:
        return [(s.index, s.expect) for s in self.steps if s.expect is not None]

    @classmethod
    def parse(cls, text: str) -> "ScenarioScript":
        script: Optional[ScenarioScript] = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            try:
                words = shlex.split(raw, comments=True)
            except ValueError as exc:
                raise ScenarioError(f"line {lineno}: {exc}") from None
            if not words:
                continue
            head, rest = words[0], words[1:]
            if script is None:
                if head != "scenario" or not rest or rest[0] != SCRIPT_VERSION:
                    raise ScenarioError(f"line {lineno}: script must start with 'scenario {SCRIPT_VERSION}'")
                opts = _kv(rest[1:], lineno)
                script = cls(opts.get("name", "unnamed"), opts.get("backend", "simulated_zk"))
                if script.backend not in BACKENDS:
                    raise ScenarioError(f"line {lineno}: unknown backend {script.backend!r}")
                continue
            if head == "declare":
                if len(rest) < 2:
                    raise ScenarioError(f"line {lineno}: declare needs a kind and a name")
                kind, name = rest[0], rest[1]
                if kind not in KINDS:
                    raise ScenarioError(f"line {lineno}: unknown actor kind {kind!r}")
                if name in script.actors or name == "harness":
                    raise ScenarioError(f"line {lineno}: actor {name!r} declared twice")
                opts = _kv(rest[2:], lineno)
                unknown = set(opts) - KINDS[kind]
                if unknown:
                    raise ScenarioError(f"line {lineno}: unknown option(s) {sorted(unknown)} for {kind}")
                script.actors[name] = (kind, opts)
                continue
            if not rest:
                raise ScenarioError(f"line {lineno}: step needs an actor and a verb")
            script.steps.append(Step(len(script.steps), lineno, head, rest[0], _kv(rest[1:], lineno)))
        if script is None:
            raise ScenarioError("empty scenario script")
        script.validate()
        return script

    def kind_of(self, name: str) -> str:
        if name == "harness":
            return "harness"
        if name not in self.actors:
            raise KeyError(name)
        return self.actors[name][0]

    def validate(self) -> None:
        coordinators = [n for n, (k, _) in self.actors.items() if k == "coordinator"]
        if len(coordinators) != 1:
            raise ScenarioError("a scenario declares exactly one coordinator")
        for name, (kind, opts) in self.actors.items():
            if kind == "participant" and opts.get("policy", "per_interaction") not in MODES:
                raise ScenarioError(f"participant {name}: unknown policy {opts['policy']!r}")
        refs = {"to": ("verifier",), "who": ("participant",), "at": ("verifier",)}
        for step in self.steps:
            where = f"line {step.line}"
            try:
                kind = self.kind_of(step.actor)
            except KeyError:
                raise ScenarioError(f"{where}: undeclared actor {step.actor!r}") from None
            allowed = VERBS[kind].get(step.verb)
            if allowed is None:
                raise ScenarioError(f"{where}: {kind} {step.actor!r} has no verb {step.verb!r}")
            unknown = set(step.params) - allowed - {"expect"}
            if unknown:
                raise ScenarioError(f"{where}: unknown parameter(s) {sorted(unknown)}")
            for key, kinds in refs.items():
                if key in step.params and not (key == "to" and step.verb == "delegate"):
                    target = step.params[key]
                    if target not in self.actors or self.actors[target][0] not in kinds:
                        raise ScenarioError(f"{where}: {key}={target} is not a declared {kinds[0]}")
            if step.verb == "delegate":
                target = step.params.get("to")
                if target not in self.actors or self.actors[target][0] != "surrogate":
                    raise ScenarioError(f"{where}: delegate needs to=<declared surrogate>")
                if "start" not in step.params or "end" not in step.params:
                    raise ScenarioError(f"{where}: delegate needs start= and end=")
            if step.verb == "present" and "to" not in step.params:
                raise ScenarioError(f"{where}: present needs to=<verifier>")
            if kind == "surrogate" and step.verb == "present" and "index" not in step.params:
                raise ScenarioError(f"{where}: a surrogate presents a specific index=")
            if step.verb == "revoke" and "who" not in step.params:
                raise ScenarioError(f"{where}: revoke needs who=<participant>")


def _kv(words: list[str], lineno: int) -> dict:
    out = {}
    for w in words:
        key, sep, value = w.partition("=")
        if not sep or not key:
            raise ScenarioError(f"line {lineno}: expected key=value, got {w!r}")
        out[key] = value
    return out


def load_script(name_or_path: str | Path) -> ScenarioScript:
    """Parse a script file, falling back to the bundled scripts by file name."""
    path = Path(name_or_path)
    if path.exists():
        return ScenarioScript.parse(path.read_text(encoding="utf-8"))
    for name in (path.name, path.name + ".scn"):
        bundled = resources.files("unlinkid") / "scenarios" / name
        if bundled.is_file():
            return ScenarioScript.parse(bundled.read_text(encoding="utf-8"))
    raise FileNotFoundError(f"no scenario script {name_or_path!r}")


def bundled_scripts() -> list[str]:
    return sorted(p.name for p in (resources.files("unlinkid") / "scenarios").iterdir() if p.name.endswith(".scn"))


# -- execution ---------------------------------------------------------------

def _derive(seed: int, *labels: str) -> bytes:
    return hashlib.sha256(struct.pack("<Q", seed & (2**64 - 1)) + "\x00".join(labels).encode()).digest()


@dataclass
class ScenarioResult:
    name: str
    seed: int
    transcript: list[str]
    rp_transcripts: dict[str, list[str]]
    failures: list[str]
    outcomes: list[str]
    presented_values: dict[str, list[bytes]]
    coordinator: Coordinator

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def transcript_text(self) -> str:
        return "".join(line + "\n" for line in self.transcript)

    @property
    def transcript_hash(self) -> str:
        return hashlib.sha256(self.transcript_text.encode()).hexdigest()

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        (out / "rp").mkdir(parents=True, exist_ok=True)
        (out / "transcript.txt").write_text(self.transcript_text, encoding="utf-8")
        for name, lines in self.rp_transcripts.items():
            (out / "rp" / f"{name}.txt").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
        return out


def _presentation_fields(p: Presentation) -> dict[str, bytes]:
    s = p.statement
    return {
        "display": p.display.encode(),
        "id_value": s.id_value,
        "allow_root": s.allow_root,
        "block_root": s.block_root,
        "epoch": struct.pack("<Q", s.epoch),
        "context": s.context_tag or b"",
        "statement_digest": p.proof.statement_digest,
        "proof_payload": p.proof.payload,
    }


def shared_fields(a: Presentation, b: Presentation) -> set[str]:
    fa, fb = _presentation_fields(a), _presentation_fields(b)
    return {k for k in fa if fa[k] == fb[k] and fa[k]}


class _Run:
    def __init__(self, script: ScenarioScript, seed: int):
        self.script = script
        self.seed = seed
        ticks = iter(range(1_700_000_000, 1_800_000_000, 3600))
        self.coord_name = next(n for n, (k, _) in script.actors.items() if k == "coordinator")
        copts = script.actors[self.coord_name][1]
        self.coordinator = Coordinator(signing_key=signing_key_from_seed(_derive(seed, "coordinator-key")),
                                       smt_depth=int(copts.get("smt_depth", 256)), clock=lambda: next(ticks))
        if script.backend == "disclosing":
            self.backend = DisclosingBackend()
        else:
            self.backend = simulated_zk_backend(_derive(seed, "backend-key"))
        self.participants: dict[str, Participant] = {}
        self.surrogates: dict[str, Optional[Surrogate]] = {}
        self.verifiers: dict[str, VerifierConfig] = {}
        self.inbox: dict[str, list[Presentation]] = {}
        self.rp_lines: dict[str, list[str]] = {}
        self.presented: dict[str, list[bytes]] = {}
        for name, (kind, opts) in script.actors.items():
            if kind == "participant":
                secret = PortfolioSecret(_derive(seed, "participant", name), name.encode())
                ids = derive_portfolio(secret, int(opts.get("size", 8)))
                self.participants[name] = Participant(
                    ids, SelectionPolicy(opts.get("policy", "per_interaction")), secret=secret,
                    coordinator_key=self.coordinator.public_key, display_format=opts.get("format", "uuid"))
                self.presented[name] = []
            elif kind == "surrogate":
                self.surrogates[name] = None
                self.presented[name] = []
            elif kind == "verifier":
                backend_id = self.backend.backend_id
                self.verifiers[name] = VerifierConfig(self.coordinator.public_key, int(opts.get("max_stale", 1)),
                                                      frozenset({backend_id}), {backend_id: self.backend})
                self.inbox[name] = []
                self.rp_lines[name] = []

    def execute(self, step: Step) -> tuple[str, bytes]:
        kind = self.script.kind_of(step.actor)
        handler = getattr(self, f"_{kind}_{step.verb}")
        try:
            return handler(step)
        except tuple(cls for cls, _ in _ERROR_CODES) as exc:
            code = next(c for cls, c in _ERROR_CODES if isinstance(exc, cls))
            return f"error:{code}", code.encode()

    def _epoch(self, step: Step) -> Optional[int]:
        return int(step.params["epoch"]) if "epoch" in step.params else None

    def _coordinator_publish(self, step: Step):
        return "ok", self.coordinator.publish_epoch().to_bytes()

    def _coordinator_revoke(self, step: Step):
        target = self.participants[step.params["who"]].commitment.root
        self.coordinator.revoke_commitment(target)
        return "ok", target

    def _participant_register(self, step: Step):
        p = self.participants[step.actor]
        p.register(self.coordinator)
        return "ok", p.commitment.root

    def _participant_sync(self, step: Step):
        return "ok", self.participants[step.actor].sync(self.coordinator, self._epoch(step)).to_bytes()

    def _deliver(self, actor: str, verifier: str, p: Presentation) -> bytes:
        self.inbox[verifier].append(p)
        self.presented[actor].append(p.statement.id_value)
        s, pr = p.statement.to_bytes(), p.proof.to_bytes()
        self.rp_lines[verifier].append(f"{len(self.inbox[verifier]) - 1} {p.display} {s.hex()} {pr.hex()} "
                                       f"{p.bundle.to_bytes().hex()}")
        return p.display.encode() + s + pr

    def _participant_present(self, step: Step):
        verifier = step.params["to"]
        p = self.participants[step.actor].present(
            step.params.get("label", verifier), epoch=self._epoch(step),
            context=step.params.get("context", "").encode(), backend=self.backend)
        return "ok", self._deliver(step.actor, verifier, p)

    def _participant_delegate(self, step: Step):
        grant = self.participants[step.actor].delegate(int(step.params["start"]), int(step.params["end"]))
        self.surrogates[step.params["to"]] = Surrogate(grant)
        return "ok", grant.to_bytes()

    def _surrogate(self, name: str) -> Surrogate:
        s = self.surrogates[name]
        if s is None:
            raise AuthorizationError(f"surrogate {name} holds no grant")
        return s

    def _surrogate_sync(self, step: Step):
        return "ok", self._surrogate(step.actor).sync(self.coordinator, self._epoch(step)).to_bytes()

    def _surrogate_present(self, step: Step):
        verifier = step.params["to"]
        p = self._surrogate(step.actor).present(int(step.params["index"]), epoch=self._epoch(step),
                                                context=step.params.get("context", "").encode(),
                                                backend=self.backend)
        return "ok", self._deliver(step.actor, verifier, p)

    def _verifier_verify(self, step: Step):
        inbox = self.inbox[step.actor]
        if not inbox:
            return "error:nothing_to_verify", b""
        p = inbox[-1]
        estimate = int(step.params.get("at_epoch", self.coordinator.epoch))
        result = rp_verify(self.verifiers[step.actor], p.display, p.proof, p.statement, p.bundle, estimate)
        return str(result), p.proof.to_bytes()

    def _scope(self, step: Step) -> list[Presentation]:
        if "at" in step.params:
            return list(self.inbox[step.params["at"]])
        return [p for box in self.inbox.values() for p in box]

    def _harness_distinct_ids(self, step: Step):
        shown = {p.statement.id_value for p in self._scope(step)}
        return str(len(shown)), b"".join(sorted(shown))

    def _harness_intersection(self, step: Step):
        presentations = self._scope(step)
        leaked: set[str] = set()
        for a, b in combinations(presentations, 2):
            leaked |= shared_fields(a, b) - BUNDLE_FIELDS
            # byte-level: neither presentation carries the other's identifier
            blob_a = b"".join(_presentation_fields(a).values())
            blob_b = b"".join(_presentation_fields(b).values())
            if a.statement.id_value != b.statement.id_value and (
                    b.statement.id_value in blob_a or a.statement.id_value in blob_b):
                leaked.add("foreign_identifier")
        outcome = "bundle_only" if not leaked else "leak:" + ",".join(sorted(leaked))
        return outcome, outcome.encode()


def run_scenario(script: ScenarioScript, seed: int = 0, out_dir: str | Path | None = None) -> ScenarioResult:
    script.validate()
    run = _Run(script, seed)
    transcript, outcomes, failures = [], [], []
    for step in script.steps:
        outcome, payload = run.execute(step)
        expected = step.expect or ("accept" if step.verb == "verify" else None)
        if expected is None:
            ok = not outcome.startswith(("error:", "reject:", "leak:"))
        else:
            ok = outcome == expected
        if not ok:
            failures.append(f"step {step.index} (line {step.line}) {step.actor} {step.verb}: "
                            f"got {outcome}, expected {expected or 'success'}")
        outcomes.append(outcome)
        transcript.append(f"{step.index} {step.actor} {step.verb} {outcome} {hashlib.sha256(payload).hexdigest()}")
    result = ScenarioResult(script.name, seed, transcript, run.rp_lines, failures, outcomes,
                            run.presented, run.coordinator)
    if out_dir is not None:
        result.write(out_dir)
    return result
