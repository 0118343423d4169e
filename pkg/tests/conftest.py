import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion id")


@pytest.fixture
def detail(request):
    """Acceptance tests append a short measured-value summary here."""
    notes = []
    request.node._criterion_notes = notes
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    notes = getattr(item, "_criterion_notes", [])
    _RESULTS[mark.args[0]] = (rep.passed, "; ".join(notes), rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS, key=lambda s: (int(s[1:].split()[0]), s)):
        ok, note, dur = _RESULTS[name]
        terminalreporter.write_line(
            f"{name:<12} {'PASS' if ok else 'FAIL'}  ({dur:.1f}s)  {note}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
