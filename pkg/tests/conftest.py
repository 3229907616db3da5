import pytest

# filled by tests/test_acceptance.py; echoed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    def log(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
