import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one ``AC<k> PASS/FAIL`` line; all lines are repeated in the terminal summary."""

    def _report(label, ok, detail):
        line = f"{label} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
