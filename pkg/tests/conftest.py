"""Shared pytest hooks: acceptance results are repeated in the terminal summary."""

from __future__ import annotations

import pytest

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``record(label, passed, detail)`` prints and keeps one PASS/FAIL line."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(label: str, passed: bool, detail: str) -> str:
        line = f"ACCEPTANCE {label}: {'PASS' if passed else 'FAIL'} -- {detail}"
        print(line)
        lines.append(line)
        return line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
