import pytest

_RESULTS = "acceptance_results"


def pytest_configure(config):
    setattr(config, _RESULTS, {})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    detail = dict(rep.user_properties).get("detail", "")
    line = f"{'PASS' if rep.passed else 'FAIL'} criterion {number}: {title}"
    if detail:
        line += f" ({detail})"
    getattr(item.config, _RESULTS)[number] = line


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, _RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
