"""Acceptance summary: one PASS/FAIL line per criterion after the run."""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))  # make tests/oracles.py importable

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _results.setdefault(m.args[0], {"title": m.args[1], "outcome": "NOT RUN", "props": []})


def pytest_runtest_makereport(item, call):
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    entry = _results[m.args[0]]
    if call.when == "setup" and call.excinfo is not None:
        entry["outcome"] = "ERROR"
    elif call.when == "call":
        entry["outcome"] = "FAIL" if call.excinfo is not None else "PASS"
        entry["props"] = list(item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_results):
        e = _results[n]
        detail = ", ".join(f"{k}={v}" for k, v in e["props"])
        tr.write_line(f"[{e['outcome']:>7s}] {n:2d}. {e['title']}" + (f"  ({detail})" if detail else ""))
    passed = sum(e["outcome"] == "PASS" for e in _results.values())
    tr.write_line(f"{passed}/{len(_results)} criteria passed")
