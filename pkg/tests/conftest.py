import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def _record(label: str, ok: bool, detail: str, seconds: float | None = None, budget: float | None = None):
        timing = ""
        if seconds is not None:
            timing = f" [{seconds:.2f} s"
            if budget is not None:
                ok = ok and seconds < budget
                timing += f" / budget {budget:g} s"
            timing += "]"
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}{timing}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
