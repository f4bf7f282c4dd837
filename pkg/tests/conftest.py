from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one pass/fail line per acceptance criterion."""

    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
