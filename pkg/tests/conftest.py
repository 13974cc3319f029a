import collections

import pytest

_outcomes = collections.defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _outcomes[mark.args[0]].append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_outcomes):
        runs = _outcomes[n]
        passed = sum(1 for _, o in runs if o == "passed")
        status = "PASS" if passed == len(runs) else "FAIL"
        tr.write_line(f"criterion {n}: {status} ({passed}/{len(runs)} checks)")
        for name, o in runs:
            if o != "passed":
                tr.write_line(f"    {o}: {name}")
