import numpy as np
import pytest

from nomadmm.model import assemble_channel_matrix, draw_channel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_system(rng, J=8, K=4, N_r=2):
    """Assembled channel for a random instance."""
    return assemble_channel_matrix(draw_channel(J, N_r, K, rng))


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
