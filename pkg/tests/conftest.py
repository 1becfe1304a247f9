import warnings

import numpy as np
import pytest

from eulerci.params import params_from_dict


def toy_params(lambda0=2, time_lambda0=10, b=1.5, M="geometric", eps0=0.01):
    cfg = {"derive_from_eps": True, "eps": 0.1, "b": b, "eps0": eps0, "lambda0": lambda0,
           "time_lambda0": time_lambda0, "M": M, "toy_mode": True}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return params_from_dict(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_toy_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="toy mode")
        yield


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
