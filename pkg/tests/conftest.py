import pytest

# (criterion, passed, detail) lines collected by the acceptance tests
ACCEPTANCE_LINES: list = []


def record(criterion: int, name: str, passed: bool, detail: str) -> str:
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion:2d} {name}: {detail}"
    ACCEPTANCE_LINES.append((criterion, line))
    print(line)
    return line


@pytest.fixture
def recorder():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
