"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str):
    ACCEPTANCE[number] = (passed, detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
