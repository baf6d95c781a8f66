import acceptance_report


def pytest_terminal_summary(terminalreporter):
    if not acceptance_report.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance_report.VERDICTS):
        terminalreporter.write_line(acceptance_report.line(number))
