"""Shared fixtures: built-in scenarios, their synthesised gains and demo artifacts.

Synthesis is the slow part of the pipeline, so each demo scenario is
synthesised once per session; the wall-clock cost is recorded on the
fixture for tests whose time budget includes it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import pytest

from triobs.cli import builtin_scenario, main, synthesize

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


@dataclass
class Synthesised:
    scenario: object
    result: object
    seconds: float


def _synth(name: str) -> Synthesised:
    sc = builtin_scenario(name)
    tic = time.perf_counter()
    result = synthesize(sc)
    return Synthesised(sc, result, time.perf_counter() - tic)


@pytest.fixture(scope="session")
def ex11():
    """``example11`` scenario with its fixed-ball schedule."""
    return _synth("example11")


@pytest.fixture(scope="session")
def chain2():
    """``chain2`` scenario with its switching plan, every needed segment synthesised."""
    return _synth("chain2")


@pytest.fixture(scope="session")
def demo_dirs(tmp_path_factory):
    """Each demo run once through the command line; maps demo name to ``(exit code, out dir)``."""
    out = {}
    for name in ("example11-odp", "chain2-sodp"):
        d = tmp_path_factory.mktemp(name)
        code = main(["demo", name, "--out-dir", str(d), "-q"])
        out[name] = (code, d)
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
