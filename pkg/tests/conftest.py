import _support


def pytest_terminal_summary(terminalreporter):
    if _support.CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _support.CRITERIA:
            terminalreporter.write_line(line)
