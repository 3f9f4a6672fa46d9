from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import pytest

SCENARIOS = Path(str(resources.files("gdtn") / "scenarios"))


def scenario_path(name: str) -> Path:
    return SCENARIOS / name


def scenario_doc(name: str) -> dict:
    return json.loads(scenario_path(name).read_text())


@pytest.fixture
def scenarios() -> Path:
    return SCENARIOS


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the acceptance summary, then return the flag."""

    def record(number: int, ok: bool, text: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
