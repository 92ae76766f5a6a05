from __future__ import annotations

import time

import pytest

_results: dict[int, dict] = {}
_started = time.perf_counter()


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    criterion, title = marker.args
    entry = _results.setdefault(criterion, {"title": title, "ok": True, "failed": []})
    if call.excinfo is not None:
        entry["ok"] = False
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for criterion in sorted(_results):
        entry = _results[criterion]
        status = "PASS" if entry["ok"] else "FAIL"
        extra = f"  (failed: {', '.join(entry['failed'])})" if entry["failed"] else ""
        tr.write_line(f"criterion {criterion}: {status}  {entry['title']}{extra}")
    elapsed = time.perf_counter() - _started
    tr.write_line(f"whole session: {elapsed:.1f} s")


@pytest.fixture(scope="session")
def session_clock():
    return _started
