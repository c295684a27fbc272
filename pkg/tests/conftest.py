import os
import sys
from collections import OrderedDict

sys.path.insert(0, os.path.dirname(__file__))

_CRITERIA = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            n, title = mark.args
            _CRITERIA.setdefault(n, {"title": title, "tests": OrderedDict()})
            _CRITERIA[n]["tests"][item.nodeid] = None


def pytest_runtest_logreport(report):
    for entry in _CRITERIA.values():
        if report.nodeid in entry["tests"]:
            prev = entry["tests"][report.nodeid]
            if report.when == "call" or (report.failed and prev is None) or (report.skipped and prev is None):
                details = [v for k, v in report.user_properties if k == "detail"]
                entry["tests"][report.nodeid] = (report.outcome, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        results = [r for r in entry["tests"].values() if r is not None]
        if not results:
            continue
        ok = all(o == "passed" for o, _ in results)
        partial = "" if len(results) == len(entry["tests"]) else f" (partial: {len(results)}/{len(entry['tests'])} run)"
        tr.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}{partial}  {entry['title']}")
        for nodeid, r in entry["tests"].items():
            if r is None:
                continue
            outcome, details = r
            name = nodeid.split("::")[-1]
            tr.write_line(f"    {outcome:<7} {name}" + (f"  [{'; '.join(details)}]" if details else ""))
