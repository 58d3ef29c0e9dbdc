import pytest

_RESULTS: list[tuple[str, str, bool, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        detail = dict(item.user_properties).get("detail", "")
        _RESULTS.append((str(marker.args[0]), marker.args[1], rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, title, ok, detail in _RESULTS:
        line = f"criterion {label:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
