import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

_LINES = {}


def report(number, ok, detail):
    """Record and print one acceptance line."""
    line = f"[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}"
    _LINES[number] = line
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_LINES):
            terminalreporter.write_line(_LINES[k])
