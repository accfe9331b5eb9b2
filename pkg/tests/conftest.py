import pytest

_ACCEPTANCE = {}


@pytest.fixture
def report_ac():
    """Record one line per acceptance criterion: report_ac("AC1", passed, detail)."""
    def record(key, passed, detail):
        line = f"{key:<5} {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.setdefault(key, []).append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (len(k), k)):
        for line in _ACCEPTANCE[key]:
            terminalreporter.write_line(line)
