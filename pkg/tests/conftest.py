"""Shared fixtures; collects acceptance-criterion verdicts for the terminal summary."""

import pytest

_CRITERIA = []


@pytest.fixture
def report_criterion():
    def report(number, name, passed, detail, seconds):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}  {name}: {detail} [{seconds:.1f}s]"
        _CRITERIA.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
