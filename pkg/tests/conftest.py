"""Shared pytest hooks.

The acceptance tests record one verdict line each; echo them after the
run so a plain ``pytest -v`` log always ends with the verdict table.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "_RESULTS", None)
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance summary")
    for line in lines:
        terminalreporter.write_line(line)
