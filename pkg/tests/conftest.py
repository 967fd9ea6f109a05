import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


@pytest.fixture
def detail(request):
    """Free-text notes shown next to the criterion's PASS/FAIL line."""
    marker = request.node.get_closest_marker("criterion")
    if marker is None:
        return []
    return _CRITERIA.setdefault(marker.args[0], {"ok": True, "notes": []})["notes"]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    entry = _CRITERIA.setdefault(marker.args[0], {"ok": True, "notes": []})
    entry["ok"] = entry["ok"] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        e = _CRITERIA[k]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {k}: {status}  {'; '.join(e['notes'])}")
