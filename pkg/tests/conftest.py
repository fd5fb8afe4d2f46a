import warnings

import numpy as np
import pytest

from qme.models import SpinBosonSpec, SpinChainSpec, build_spin_boson, build_spin_chain

_ACCEPTANCE: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): one acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    label = getattr(report, "acceptance_label", None)
    if label is not None:
        _ACCEPTANCE[label] = "PASS" if report.passed else "FAIL"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        rep.acceptance_label = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{_ACCEPTANCE[label]}  {label}")


@pytest.fixture(autouse=True)
def _quiet_tle_rescaling():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="TLE coupling rescaled")
        yield


@pytest.fixture(scope="session")
def spin_boson():
    """Two-level system with beta * omega0 = 1 and c = (1, 1, 1)."""
    return build_spin_boson(SpinBosonSpec(omega0=1.0, beta=1.0, c=(1, 1, 1), j0=1.0))


@pytest.fixture(scope="session")
def chain3():
    return build_spin_chain(SpinChainSpec(n_sites=3, beta=0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
