"""Shared test plumbing: a terminal summary of acceptance verdicts.

The acceptance tests register one line each here; the hook prints them
after the normal pytest output so a full run ends with a compact
criterion-by-criterion PASS/FAIL table.
"""

_criterion_lines = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    word = "PASS" if passed else "FAIL"
    _criterion_lines[number] = f"criterion {number:02d}: {word}  {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criterion_lines):
        terminalreporter.write_line(_criterion_lines[number])
