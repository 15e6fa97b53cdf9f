import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE = []


def pytest_addoption(parser):
    parser.addoption("--full-scale", action="store_true",
                     help="run the hours-long full-scale acceptance check")


@pytest.fixture
def report():
    """Record one acceptance line; printed together at the end of the session."""
    def add(number, passed, text):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        ACCEPTANCE.append((number, f"[{status}] criterion {number:>2}: {text}"))
    return add


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
