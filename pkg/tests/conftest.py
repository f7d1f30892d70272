"""Shared pytest plumbing: surfaces acceptance-criterion verdicts.

tests/test_acceptance.py records one line per criterion; they are replayed
after the run so they stay visible even though pytest captures test output.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
