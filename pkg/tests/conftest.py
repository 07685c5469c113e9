"""Acceptance-criterion bookkeeping.

Tests marked ``@pytest.mark.criterion(n, "title")`` are collected here and
summarized as one PASS/FAIL line per criterion at the end of the run. A
criterion passes only if every test carrying its number passed.
"""
import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] &= call.excinfo is None
    entry["details"].extend(str(v) for k, v in item.user_properties if k == "measured")


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["details"])
        tr.write_line(f"criterion {number:2d} {status}  {entry['title']}  [{detail}]")
