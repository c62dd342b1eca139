import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion(request, capsys):
    """Record a PASS/FAIL line for an acceptance criterion; echo it live."""

    def report(number, ok, detail):
        line = f"C{number} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
