from hypothesis import settings

# Fixed example sequence so the suite is reproducible run to run.
settings.register_profile("repro", derandomize=True, deadline=None, print_blob=True)
settings.load_profile("repro")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
