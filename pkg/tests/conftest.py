import math

import pytest

from stochtd.design import LinearDesign, builtin_nonlinear_2d, nonlinear_2d_certificate
from stochtd.noise import OuParams
from stochtd.simulate import SignalModel, SimulationGrid, TdConfig

ALPHA, BETA = 3.0, 1.0 / 18.0


def reference_config(kind="linear", r=30.0, sigma1=0.2, sigma2=2.0, sigma3=2.0, x0=None):
    f = LinearDesign((-2.0, -4.0)).td_function() if kind == "linear" else builtin_nonlinear_2d()
    return TdConfig(
        n=2, r=r, f=f, sigma1=sigma1, sigma2=sigma2, sigma3=sigma3,
        noise1=OuParams(ALPHA, BETA, 1.0), noise2=OuParams(ALPHA, BETA, -1.0),
        x0=(math.sin(1.0), 0.0) if x0 is None else x0,
    )


@pytest.fixture
def linear_config():
    return reference_config("linear")


@pytest.fixture
def nonlinear_config():
    return reference_config("nonlinear")


@pytest.fixture
def signal():
    return SignalModel.sinusoid(amplitude=1.0, frequency=3.0, phase=1.0)


@pytest.fixture
def grid():
    return SimulationGrid(t_end=5.0, dt=0.001)


@pytest.fixture
def nonlinear_cert():
    return nonlinear_2d_certificate(theta=0.5)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number][1])
