import numpy as np
import pytest

from lfcfg.field import Field


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_field(rng, shape=(3, 16, 16)):
    return Field(rng.standard_normal(shape))


@pytest.fixture
def field_factory(rng):
    def make(shape=(3, 16, 16)):
        return random_field(rng, shape)

    return make
