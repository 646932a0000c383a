import os
import sys

sys.path.insert(0, os.path.dirname(__file__))


def pytest_terminal_summary(terminalreporter):
    from shared import OUTCOMES
    if not OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(OUTCOMES, key=lambda k: int(k.split()[1].rstrip(":"))):
        ok, detail = OUTCOMES[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")
