"""Shared fixtures: the acceptance-criteria reporter.

Criterion pass/fail lines are collected during the run and echoed in the
terminal summary, where pytest's output capture no longer hides them.
"""

import pytest


def pytest_configure(config):
    config._criterion_lines = []


@pytest.fixture
def criterion_report(request):
    """Record one ``CRITERION n: PASS/FAIL`` line for the terminal summary."""

    def _report(criterion: int, passed: bool, detail: str = "") -> None:
        suffix = f" ({detail})" if detail else ""
        request.config._criterion_lines.append(
            f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'}{suffix}"
        )

    return _report


def pytest_terminal_summary(terminalreporter):
    lines = getattr(terminalreporter.config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
