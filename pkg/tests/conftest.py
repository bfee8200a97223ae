import pytest

ACCEPTANCE = {}


def record(n, name, ok, detail):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {name}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture
def acceptance():
    return record
