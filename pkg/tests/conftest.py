import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from qmcgsa.diffusion import ModelParams, TimeGrid  # noqa: E402
from qmcgsa.instruments import InstrumentSpec  # noqa: E402


@pytest.fixture
def params():
    return ModelParams(spot=100.0, rate=0.0, vol=0.3)


@pytest.fixture
def grid():
    return TimeGrid.uniform(1.0, 32)


@pytest.fixture
def european():
    return InstrumentSpec.default("european")


@pytest.fixture
def asian():
    return InstrumentSpec.default("asian")


@pytest.fixture
def dko():
    return InstrumentSpec.default("dko")


@pytest.fixture
def cliquet():
    return InstrumentSpec.default("cliquet")
