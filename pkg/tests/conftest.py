"""Collects acceptance verdicts and prints them after the test run."""

ACCEPTANCE = {}


def report(criterion: int, passed, detail: str):
    """Record one verdict; ``passed`` is True, False or None (skipped)."""
    ACCEPTANCE[criterion] = (passed, detail)
    word = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
    print(f"[acceptance {criterion}] {word}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        word = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        terminalreporter.write_line(f"criterion {k}: {word}  {detail}")
