from __future__ import annotations

import pytest

from unlinkid.portfolio import PortfolioSecret, derive_portfolio, encode_identifier
from unlinkid.scenario import ScenarioError, ScenarioScript, _derive, bundled_scripts, load_script, run_scenario

HEADER = "scenario v1 name=t backend=simulated_zk\n"


def test_bundled_scripts_present():
    assert bundled_scripts() == ["anon_consult.scn", "eligibility.scn", "sanctions.scn"]


@pytest.mark.parametrize("name", ["anon_consult.scn", "eligibility.scn", "sanctions.scn"])
@pytest.mark.parametrize("seed", [0, 7, 123456789])
def test_bundled_scripts_pass(name, seed):
    result = run_scenario(load_script(name), seed)
    assert result.passed, result.failures


def test_expected_outcomes_recorded():
    script = load_script("sanctions")
    expected = dict(script.expected_outcomes)
    result = run_scenario(script, 7)
    for index, want in expected.items():
        assert result.outcomes[index] == want


def test_eligibility_distinct_agencies():
    result = run_scenario(load_script("eligibility"), 7)
    assert result.passed
    shown = {v for values in result.presented_values.values() for v in values}
    assert len(shown) == 3


def test_determinism(tmp_path):
    a = run_scenario(load_script("eligibility.scn"), 7, tmp_path / "a")
    b = run_scenario(load_script("eligibility.scn"), 7, tmp_path / "b")
    assert a.transcript_hash == b.transcript_hash
    for rel in ("transcript.txt", "rp/benefits.txt"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    assert run_scenario(load_script("eligibility.scn"), 8).transcript_hash != a.transcript_hash


@pytest.mark.parametrize("body, message", [
    ("declare coordinator c\nbob register\n", "undeclared"),
    ("declare coordinator c\ndeclare participant p\np dance\n", "verb"),
    ("declare participant p\np register\n", "coordinator"),
    ("declare coordinator c\ndeclare coordinator d\n", "coordinator"),
    ("declare coordinator c\ndeclare participant p\np present to=nobody\n", "nobody"),
    ("declare coordinator c\ndeclare widget w\n", "widget"),
    ("declare coordinator c\ndeclare participant p policy=sometimes\n", "sometimes"),
    ("declare coordinator c\nc publish junk\n", "key=value"),
])
def test_validation_errors(body, message):
    with pytest.raises(ScenarioError, match=message):
        run_scenario(ScenarioScript.parse(HEADER + body))


def test_bad_header():
    with pytest.raises(ScenarioError):
        ScenarioScript.parse("scenario v2 name=x\n")
    with pytest.raises(ScenarioError):
        ScenarioScript.parse("declare coordinator c\n")


def test_failed_expectation_reported():
    text = HEADER + (
        "declare coordinator c\ndeclare participant p size=2\ndeclare verifier v\n"
        "p register\nc publish\np sync\np present to=v\nv verify expect=reject:stale_epoch\n")
    result = run_scenario(ScenarioScript.parse(text))
    assert not result.passed and "expected reject:stale_epoch" in result.failures[0]


def test_exhaustion_outcome():
    text = HEADER + (
        "declare coordinator c\ndeclare participant p size=1\ndeclare verifier v\n"
        "p register\nc publish\np sync\np present to=v\np present to=v expect=error:exhausted\n")
    assert run_scenario(ScenarioScript.parse(text)).passed


def test_transcript_hygiene(tmp_path):
    for name in bundled_scripts():
        script = load_script(name)
        result = run_scenario(script, 7, tmp_path / name)
        texts = {p.stem: p.read_text() for p in (tmp_path / name / "rp").iterdir()}
        portfolios = {}
        for actor, (kind, opts) in script.actors.items():
            if kind == "participant":
                secret = PortfolioSecret(_derive(7, "participant", actor), actor.encode())
                portfolios[actor] = derive_portfolio(secret, int(opts.get("size", 8)))
        for rp, text in texts.items():
            shown_here = {line.split()[1] for line in text.splitlines()}
            for ids in portfolios.values():
                for ident in ids:
                    uuid_text = encode_identifier(ident)
                    if uuid_text in shown_here:
                        continue
                    assert uuid_text not in text and ident.value.hex() not in text, (name, rp)
        assert result.passed
