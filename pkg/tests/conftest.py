import os

# four workers are needed to check that parallel runs do not depend on the
# thread count; numba reads this once at import
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
