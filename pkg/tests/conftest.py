import pytest

# (criterion number, title, passed, detail), filled by test_acceptance
REPORT: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def report():
    def record(number, title, passed, detail):
        REPORT.append((number, title, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(REPORT):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
