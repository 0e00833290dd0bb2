from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

import pytest

from consensus_dx.demo import make_corpus

CRITERIA = {
    1: "combination count",
    2: "recorded voting cases",
    3: "binomial oracle",
    4: "matcher oracle equivalence",
    5: "partition boundary",
    6: "determinism",
    7: "invariant suite",
    8: "split arithmetic",
}
_ACCEPTANCE: dict[int, list[str]] = {}


@pytest.fixture(scope="session")
def demo_corpus():
    return make_corpus()


@pytest.fixture(scope="session")
def voting_cases_dir() -> Path:
    return Path(str(resources.files("consensus_dx") / "fixtures" / "voting_cases"))


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"::test_c(\d+)_", report.nodeid)
    if not m:
        return
    # setup/teardown only matter when they fail; the call phase always counts
    if report.when == "call" or report.outcome != "passed":
        _ACCEPTANCE.setdefault(int(m.group(1)), []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        verdict = "PASS" if all(o == "passed" for o in _ACCEPTANCE[number]) else "FAIL"
        terminalreporter.write_line(f"{verdict}  C{number} {CRITERIA.get(number, '')}")
