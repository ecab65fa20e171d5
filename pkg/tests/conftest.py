"""Per-criterion PASS/FAIL summary for the acceptance suite.

Acceptance tests carry ``@pytest.mark.criterion(n, "title")``. A criterion
passes when every test carrying its number passes. Tests may attach measured
values through the ``measured`` fixture; they are echoed on the summary line.
"""

import pytest

_RESULTS = {}
_TITLES = {}
_NOTES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.fixture
def measured(request):
    notes = _NOTES.setdefault(request.node.nodeid, [])

    def note(text):
        notes.append(str(text))

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    _TITLES[n] = title
    ok = rep.passed or (rep.when != "call" and not rep.failed)
    entry = _RESULTS.setdefault(n, {})
    entry[item.nodeid] = entry.get(item.nodeid, True) and ok and not rep.skipped


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status = "PASS" if all(_RESULTS[n].values()) else "FAIL"
        notes = [x for nodeid in _RESULTS[n] for x in _NOTES.get(nodeid, [])]
        line = f"criterion {n}: {status}  {_TITLES[n]}"
        if notes:
            line += "  [" + "; ".join(notes) + "]"
        tr.write_line(line)
