import numpy as np
import pytest

from tobdetect.simulator import SceneSpec, acceptance_batch, simulate, simulate_batch

ACCEPTANCE = {
    1: "GMM recovery on 50 random mixtures",
    2: "FIR smoothing vs direct convolution",
    3: "classification metrics vs brute force",
    4: "logistic gradient vs finite differences",
    5: "end-to-end synthetic acceptance batch",
    6: "threshold monotonicity",
    7: "determinism of two full runs",
    8: "TRV1 round-trips and corruption classes",
}

_outcomes = {}
_details = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _outcomes.get(marker, "PASS")
        _outcomes[marker] = "PASS" if prev == "PASS" and report.outcome == "passed" else "FAIL"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result().criterion = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, text in ACCEPTANCE.items():
        status = _outcomes.get(n, "NOT RUN")
        extra = f" ({'; '.join(_details[n])})" if _details.get(n) else ""
        terminalreporter.write_line(f"criterion {n}: {status} - {text}{extra}")


@pytest.fixture
def detail():
    """``detail(n, text)`` attaches a measured value to criterion n's summary line."""
    def add(n, text):
        _details.setdefault(n, []).append(text)
        print(f"criterion {n}: {text}")
    return add


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def birth60():
    """A 120 s supine scene with the birth at 60 s."""
    return simulate(SceneSpec(duration_s=120.0, t_birth=60.0, rng_seed=7))


@pytest.fixture(scope="session")
def nobirth():
    return simulate(SceneSpec(duration_s=120.0, t_birth=None, rng_seed=8))


@pytest.fixture(scope="session")
def acceptance_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    return simulate_batch(acceptance_batch(), out)
