"""Shared pytest plumbing: the acceptance verdict table."""

# criterion name -> (passed, detail); filled by tests/test_acceptance.py
VERDICTS: dict[str, tuple[bool, str]] = {}


def record(name: str, passed: bool, detail: str = "") -> bool:
    VERDICTS[name] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in VERDICTS.items():
        line = f"{'PASS' if passed else 'FAIL'} {name}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
