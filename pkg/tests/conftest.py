import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for line in mod.RESULTS:
        tr.write_line(line)
    tr.write_line("")
    for crit in sorted(mod.VERDICTS):
        ok = all(mod.VERDICTS[crit])
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {crit}")
