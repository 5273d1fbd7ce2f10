import pytest

_LINES: list[str] = []


@pytest.fixture
def report():
    """Record a PASS/FAIL line; all lines are repeated in the terminal summary."""

    def emit(criterion: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
        _LINES.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
