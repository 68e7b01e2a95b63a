import pytest

# one line per acceptance criterion, echoed after the test summary so the
# verdicts survive pytest's output capture
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criterion_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
