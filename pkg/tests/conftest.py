"""Shared pytest wiring.

test_acceptance.py reports each top-level criterion through
record_criterion; the hook below prints one pass/fail line per criterion
after the run so the verdicts are visible even though pytest captures
stdout inside the tests themselves.
"""

CRITERIA = {}


def record_criterion(num: int, ok: bool, detail: str) -> None:
    CRITERIA[num] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        ok, detail = CRITERIA[num]
        tag = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{tag}] criterion {num}: {detail}")
