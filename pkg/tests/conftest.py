import sys
from pathlib import Path

# make the shared test helpers importable as plain modules
sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_log.lines():
        terminalreporter.write_line(line)
