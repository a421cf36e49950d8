import numpy as np
import pytest

from relvox.data import gen_synthetic
from relvox.training import train
from relvox.unet import UNetConfig, build, init_kaiming

TINY_SHAPE = (6, 8, 16, 16)


@pytest.fixture(scope="session")
def tiny_dataset():
    return gen_synthetic(seed=3, n_cases=3, shape=TINY_SHAPE)


@pytest.fixture(scope="session")
def tiny_net():
    """Untrained depth-2 net matching the tiny dataset."""
    config = UNetConfig(in_channels=6, depth=2, base_filters=4, input_shape=TINY_SHAPE)
    return init_kaiming(build(config), seed=0)


@pytest.fixture(scope="session")
def tiny_trained(tiny_net, tiny_dataset):
    """A briefly-trained net so relevance maps reflect a real signal."""
    net, log = train(tiny_net, tiny_dataset, epochs=25, lr=0.1, seed=0)
    return net, log
