from __future__ import annotations

import pytest

_CRITERIA: list[tuple[str, bool, str]] = []


class CriterionReport:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, name: str, passed: bool, detail: str = "") -> bool:
        _CRITERIA.append((name, bool(passed), detail))
        status = "PASS" if passed else "FAIL"
        print(f"\n[criterion] {status} {name}: {detail}")
        return bool(passed)


@pytest.fixture(scope="session")
def criterion():
    return CriterionReport()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
