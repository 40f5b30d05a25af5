"""Shared pytest wiring.

The acceptance module records one verdict line per criterion; this hook
replays them in the terminal summary so a full run always ends with the
twelve pass/fail lines regardless of capture settings.
"""


def pytest_configure(config):
    config._criterion_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
