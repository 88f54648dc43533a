import os
import sys

from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

# first calls compile numba kernels; wall-clock deadlines would be flaky
settings.register_profile("default", deadline=None)
settings.load_profile("default")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
