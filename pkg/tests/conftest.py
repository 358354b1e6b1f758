import pytest

# rows of (criterion, description, passed) filled by test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        tr.write_line(line)
