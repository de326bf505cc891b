ACCEPTANCE_LINES: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[n] = f"ACCEPTANCE #{n} {'PASS' if ok else 'FAIL'}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
