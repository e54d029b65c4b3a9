"""Collects acceptance verdicts and prints them after the run."""

import pytest

_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """``verdict(number, title, passed, detail)`` records one acceptance line."""

    def record(number, title, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2}: {title}"
        if detail:
            line += f" [{detail}]"
        _VERDICTS.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS):
        terminalreporter.write_line(line)
