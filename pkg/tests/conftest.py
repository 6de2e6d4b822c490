import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from netmeta import _accel, kernels  # noqa: E402

_ACCEPTANCE: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one acceptance criterion")


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so criterion timings measure the computation only."""
    if not _accel.USE_NUMBA:
        return
    rng = np.random.default_rng(0)
    A, B, M = rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), np.eye(2)
    kernels.block_trace(A, 2)
    kernels.btr_sandwich(A, M, np.eye(2), B)
    kernels.coefficient_matrix(A, B, M, 2)


@pytest.fixture
def stopwatch(request):
    """``with stopwatch(bound):`` fails the test if the block takes longer than ``bound`` seconds."""

    @contextmanager
    def run(bound: float):
        start = time.perf_counter()
        yield
        elapsed = time.perf_counter() - start
        request.node.user_properties.append(("elapsed", elapsed))
        request.node.user_properties.append(("bound", bound))
        assert elapsed < bound, f"took {elapsed:.2f} s, bound {bound} s"

    return run


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call" and not rep.failed:
        return
    number, title = marker.args
    props = dict(item.user_properties)
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "passed": True, "elapsed": 0.0, "bound": None})
    entry["passed"] = entry["passed"] and not rep.failed
    entry["elapsed"] = max(entry["elapsed"], props.get("elapsed", 0.0))
    entry["bound"] = props.get("bound", entry["bound"])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        status = "PASS" if e["passed"] else "FAIL"
        bound = f", bound {e['bound']:g} s" if e["bound"] else ""
        terminalreporter.write_line(f"AC{number:<2} {status}  {e['title']} ({e['elapsed']:.2f} s{bound})")
