import numpy as np
import pytest
import torch

from neuralcmf.field_network import init_network
from neuralcmf.volume_io import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def tiny_spec():
    return PhantomSpec(grid_dims=(16, 16, 16), period_T=4)


@pytest.fixture(scope="session")
def tiny_seq(tiny_spec):
    return generate_phantom(tiny_spec)


@pytest.fixture()
def fresh_net():
    """f32 network at init: intensity 0.5 everywhere, motion exactly zero."""
    return init_network(seed=0)


@pytest.fixture()
def fresh_net64():
    return init_network(seed=0, dtype=torch.float64)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
