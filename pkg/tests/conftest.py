"""Shared test plumbing.

Acceptance checks register a one-line verdict via :func:`record_criterion`;
the lines are echoed in the terminal summary so they survive output capture.
"""

ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
