import datetime as dt
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fcapm.basis import make_basis
from fcapm.methods import StockData
from fcapm.simulator import SimScenario, simulate

settings.register_profile("fcapm", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fcapm")


@pytest.fixture(scope="session")
def basis():
    return make_basis()


@pytest.fixture(scope="session")
def noiseless():
    """250 noiseless days with the sin(pi u) cos(pi v) surface."""
    x, y, beta = simulate(SimScenario(n_days=250, seed=11))
    return x, y, beta


@pytest.fixture(scope="session")
def noisy():
    x, y, beta = simulate(SimScenario(n_days=250, sigma=0.5, seed=12))
    return x, y, beta


@pytest.fixture
def small_data():
    x, y, _ = simulate(SimScenario(n_days=40, sigma=0.2, seed=13))
    return StockData(x, y)


def dates(n, start=dt.date(2022, 3, 1)):
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return tuple(out)


def random_prices(rng, n_days, scale=0.002, level=100.0):
    steps = rng.normal(0.0, scale, (n_days, 78))
    return level * np.exp(np.cumsum(steps, axis=1))


def ols_fitted(x_coefs, y_coefs):
    """Fitted response curves from OLS of response coefficients on [1, predictor coefficients]."""
    design = np.column_stack([np.ones(x_coefs.n_days), x_coefs.coefs])
    sol, *_ = np.linalg.lstsq(design, y_coefs.coefs, rcond=None)
    return y_coefs.basis.curves(design @ sol)


def white_cov(scale=4.0, n=20):
    cov = scale * np.eye(n)
    cov[0, 0] = 0.0
    return cov.tolist()


GOLDEN_DIR = Path(__file__).parent / "golden"

# PASS/FAIL lines recorded by the acceptance suite, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
