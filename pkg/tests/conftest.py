import pytest

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, checks: dict[str, bool], detail: str = "") -> bool:
        ok = all(checks.values())
        failed = [name for name, good in checks.items() if not good]
        note = detail + (f" | failed: {', '.join(failed)}" if failed else "")
        ACCEPTANCE[number] = (ok, note)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, note = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {note}")
