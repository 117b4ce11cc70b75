import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

# (criterion, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE = []


def _order(crit):
    num, rest = re.match(r"(\d+)(.*)", crit).groups()
    return int(num), rest


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE, key=lambda r: _order(r[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {crit:<4} {detail}")
