import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: list[str] = []


@pytest.fixture
def record():
    """Log one acceptance line: ``record(number, passed, detail)``."""

    def _record(number: int, passed: bool, detail: str) -> bool:
        _CRITERIA.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
