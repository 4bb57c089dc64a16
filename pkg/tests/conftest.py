"""Acceptance reporting: tests marked ``criterion(n)`` are folded into one
PASS/FAIL line per criterion in the terminal summary."""

import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    details = [str(v) for k, v in item.user_properties if k == "detail"]
    _CRITERIA.setdefault(marker.args[0], []).append((item.name, rep.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        parts = _CRITERIA[n]
        ok = all(p for _, p, _ in parts)
        failed = [name for name, p, _ in parts if not p]
        notes = "; ".join(d for _, _, ds in parts for d in ds)
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}"
        if notes:
            line += f"  ({notes})"
        if failed:
            line += f"  failed: {', '.join(failed)}"
        terminalreporter.write_line(line)
