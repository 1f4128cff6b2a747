from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
_LINES = []


@pytest.fixture(autouse=True)
def _repo_root(monkeypatch):
    # data/ and reports/ paths in the tests are relative to the checkout
    monkeypatch.chdir(ROOT)


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, title, ok, detail)``."""

    def record(n, title, ok, detail=""):
        _LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}" + (f" ({detail})" if detail else ""))
        print(_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
