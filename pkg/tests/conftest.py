import os
from collections import OrderedDict

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion id -> {"title", "outcomes": [..], "notes": [..]}
_CRITERIA: "OrderedDict[str, dict]" = OrderedDict()


def _entry(item):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return None
    cid = marker.kwargs.get("id", marker.args[0] if marker.args else item.name)
    title = marker.kwargs.get("title", marker.args[1] if len(marker.args) > 1 else "")
    return _CRITERIA.setdefault(cid, {"title": title, "outcomes": [], "notes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = _entry(item)
    if entry is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["outcomes"].append("passed" if rep.passed else ("skipped" if rep.skipped else "failed"))


@pytest.fixture
def note(request):
    """Attach a line to the criterion summary of the running test."""
    entry = _entry(request.node)

    def add(text: str) -> None:
        if entry is not None:
            entry["notes"].append(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid, e in _CRITERIA.items():
        outs = e["outcomes"]
        status = "PASS" if outs and all(o == "passed" for o in outs) else "FAIL"
        tr.write_line(f"{status} {cid}: {e['title']} ({outs.count('passed')}/{len(outs)} checks)")
        for n in e["notes"]:
            tr.write_line(f"     {n}")
