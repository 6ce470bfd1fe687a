def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import summary_lines
    except ImportError:
        return
    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
