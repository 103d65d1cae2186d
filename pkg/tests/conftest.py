"""Shared helpers for building synthetic event streams in tests."""
from __future__ import annotations

import pytest

from rugwatch.events import make_event


def addr(tag: int) -> str:
    """Deterministic throwaway address for test fixtures."""
    return "0x" + format(tag, "040x")


def ev(block, log_index, emitter, kind, **args):
    return make_event(block, log_index, emitter, kind, args)


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path


acceptance_results: list[str] = []


def record_acceptance(line: str) -> None:
    """Collect one verdict line per acceptance criterion; echoed both
    inline and in the terminal summary so a plain `pytest` run shows
    every criterion's pass/fail state."""
    acceptance_results.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus):
    if acceptance_results:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_results:
            terminalreporter.write_line(line)
