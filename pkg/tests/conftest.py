"""Shared test plumbing: collect acceptance one-liners and echo them in a
summary block once the run finishes."""

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Stash a criterion result line and print it where -s can see it."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
