_ACCEPTANCE = {}


def record_acceptance(number, label, passed, detail=""):
    _ACCEPTANCE[number] = (label, bool(passed), detail)
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {label}  {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        label, passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(
            f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {label}  {detail}")
