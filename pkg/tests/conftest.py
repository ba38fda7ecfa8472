import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the terminal summary")
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or (rep.when == "setup" and rep.failed)):
        return
    detail = " ".join(f"{k}={v}" for k, v in item.user_properties)
    status = "PASS" if rep.passed else "FAIL"
    item.config._criteria.append(f"{status} {mark.args[0]}" + (f" | {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter, config):
    if config._criteria:
        terminalreporter.section("acceptance criteria")
        for line in config._criteria:
            terminalreporter.write_line(line)
