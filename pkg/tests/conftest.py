import helpers


def pytest_terminal_summary(terminalreporter):
    if helpers.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checklist")
        for line in helpers.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
