def pytest_configure(config):
    config._scorecard = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_scorecard", [])
    if lines:
        terminalreporter.section("acceptance scorecard")
        for line in lines:
            terminalreporter.write_line(line)
