import os

import numpy as np
import pytest

from cqcnn_alzheimer.configuration import get_config, default_config


def pytest_addoption(parser):

    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the long desk-scale acceptance runs")


def pytest_configure(config):

    config.addinivalue_line("markers", "slow: long desk-scale acceptance run (needs --runslow)")


def pytest_collection_modifyitems(config, items):

    if config.getoption("--runslow"):
        return

    skip_slow = pytest.mark.skip(reason="needs --runslow")

    for item in items:

        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def configuration():

    # A configuration file can be supplied through the environment, otherwise every key takes its default
    config_path = os.environ.get('CQCNN_TEST_CONFIG')

    if config_path is None:
        return default_config()

    return get_config(config_path)


def _relative_error(a, b):

    return abs(a - b) / max(abs(a), abs(b), 1e-8)


@pytest.fixture(scope='session')
def gradcheck():
    """
    Return check(loss, params, grads, seed, n_checks, h, rtol): compares analytical gradients of the scalar
    function loss() (which reads params) with central finite differences on n_checks random entries of every
    parameter array, modifying the arrays in place and restoring them.
    """

    def check(loss, params, grads, seed=0, n_checks=3, h=1e-6, rtol=1e-3, atol=1e-7):

        generator = np.random.default_rng(seed)

        for name in sorted(params):

            array = params[name]

            for k in generator.choice(array.size, size=min(n_checks, array.size), replace=False):

                index = np.unravel_index(k, array.shape)

                saved = array[index]

                array[index] = saved + h
                plus = loss()

                array[index] = saved - h
                minus = loss()

                array[index] = saved

                numerical = (plus - minus) / (2 * h)
                analytical = float(grads[name][index])

                assert abs(numerical - analytical) <= atol or _relative_error(numerical, analytical) <= rtol, \
                    "Gradient of %s%s: analytical %.8g, numerical %.8g" % (name, index, analytical, numerical)

    return check
