import pytest

# criterion number -> (passed, detail), filled in by test_acceptance
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def report():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
