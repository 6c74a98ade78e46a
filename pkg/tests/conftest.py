"""Shared pytest hooks.

The acceptance suite records one verdict line per check; echo them in the
terminal summary so the checklist is visible even when stdout capture
hides prints from passing tests.
"""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance checks")
        for line in lines:
            terminalreporter.write_line(line)
