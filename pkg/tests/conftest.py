import numpy as np
import pytest

from psgunlearn import nn_core
from psgunlearn.config import RunConfig
from psgunlearn.data import make_gaussian_blobs
from psgunlearn.pipeline import train_base


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def blobs():
    return make_gaussian_blobs(3, 200, 8, 6.0, seed=0)


@pytest.fixture(scope="session")
def default_cfg():
    cfg = RunConfig()
    cfg.validate()
    return cfg


@pytest.fixture(scope="session")
def base_model(default_cfg, blobs):
    return train_base(default_cfg, blobs)[0]



ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
