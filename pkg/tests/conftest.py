import numpy as np
import pytest

from tailaudit import synthgen

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    key = (number, title)
    failed = rep.failed or (rep.when == "call" and rep.skipped)
    prev = _ACCEPTANCE.get(key, ("PASS", ""))[0]
    if rep.when == "call" or failed:
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _ACCEPTANCE[key] = ("FAIL" if failed or prev == "FAIL" else "PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), (status, detail) in sorted(_ACCEPTANCE.items()):
        line = f"[{status}] criterion {number:>2}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)


@pytest.fixture
def reference_spec():
    return synthgen.reference_mixture(0.05)


@pytest.fixture
def reference_teacher():
    return synthgen.reference_teacher(0.05)


@pytest.fixture
def small_reference(reference_spec, reference_teacher):
    return synthgen.sample_mixture(reference_spec, reference_teacher, 2000, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
