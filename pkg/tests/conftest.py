import os

# keep BLAS single-threaded inside tests: the batched stepper parallelizes
# across worker processes instead, and timings stay reproducible
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import warnings

import numpy as np
import pytest

from jumpflight.params import simulation_params, experiment_params
from jumpflight.theory import RegimeWarning

warnings.simplefilter("ignore", RegimeWarning)


@pytest.fixture(scope="session")
def sim_params():
    return simulation_params()


@pytest.fixture(scope="session")
def exp_params():
    return experiment_params()


@pytest.fixture(scope="session")
def small_params():
    """Cheap 48-dimensional space for engine unit tests."""
    return simulation_params(n_fock=12, nbar=2.0)


@pytest.fixture(scope="session")
def thresholds(sim_params):
    from jumpflight.repro import cached_thresholds
    return cached_thresholds(sim_params)


def pytest_addoption(parser):
    parser.addoption("--workers", action="store", type=int,
                     default=min(os.cpu_count() or 1, 2),
                     help="worker processes for heavy ensemble tests")


@pytest.fixture(scope="session")
def workers(request):
    return request.config.getoption("--workers")
