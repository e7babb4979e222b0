import pytest

_titles: dict[str, str] = {}
_outcomes: dict[str, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if item.get_closest_marker("acceptance") and item.obj.__doc__:
            _titles[item.nodeid] = item.obj.__doc__.strip().splitlines()[0]


def pytest_runtest_logreport(report):
    if report.nodeid not in _titles:
        return
    if report.failed:
        _outcomes[report.nodeid] = "FAIL"
    elif report.when == "call":
        _outcomes.setdefault(report.nodeid, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _titles:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, title in _titles.items():
        terminalreporter.write_line(f"{_outcomes.get(nodeid, 'NOT RUN'):7} {title}")
