"""Collects acceptance verdicts and prints them at the end of the session."""

import pytest

_VERDICTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def verdict():
    def record(criterion: str, passed: bool, detail: str = "") -> bool:
        _VERDICTS[criterion] = (bool(passed), detail)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_VERDICTS):
        ok, detail = _VERDICTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
