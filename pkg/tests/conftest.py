import numpy as np
import pytest

from qkr.model import ModelParams


@pytest.fixture
def params_unit() -> ModelParams:
    """h_e = 1 with a small lattice; the convention the mapping tests use."""
    return ModelParams(h_e=1.0, n_trunc=8)


@pytest.fixture
def params_critical() -> ModelParams:
    """Parameters at the measured transition, small lattice."""
    return ModelParams(h_e=1.0 / 2.1294, n_trunc=16)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(987654321))
