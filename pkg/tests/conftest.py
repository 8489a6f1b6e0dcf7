"""Shared pytest configuration: the acceptance summary block."""

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, name: str, passed: bool, detail: str) -> None:
    """Register the one-line verdict for an acceptance criterion."""
    ACCEPTANCE_LINES.append(f"criterion {criterion} [{name}]: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
