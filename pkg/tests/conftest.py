import pytest

# acceptance verdicts, filled by tests/test_acceptance.py and printed after the run
VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number, passed, detail):
        VERDICTS[number] = (passed, detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        passed, detail = VERDICTS[number]
        terminalreporter.write_line(f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}")
