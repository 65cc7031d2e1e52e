import pytest

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(key, ok, detail):
        ACCEPTANCE[key] = (bool(ok), detail)
        print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _record
