import os

import numpy as np
import pytest
from loguru import logger

from core.tensor import DenseTensor


def pytest_collection_modifyitems(config, items):
    if os.environ.get("HPDS_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="long-running; set HPDS_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def quiet_logger():
    """Keep loguru at WARNING during tests and drop any sinks a test added."""
    logger.remove()
    logger.add(lambda msg: None, level="WARNING")
    yield
    logger.remove()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def example_tensor():
    """
    The 2x2x2 worked example:
        dx1/dt = x1^2 - 3 x1 x2 + 2 x2^2
        dx2/dt = 2 x1^2 + 6 x1 x2 - x2^2
    """
    arr = np.zeros((2, 2, 2))
    arr[:, :, 0] = [[1.0, -1.5], [-1.5, 2.0]]
    arr[:, :, 1] = [[2.0, 3.0], [3.0, -1.0]]
    return DenseTensor.from_array(arr)
