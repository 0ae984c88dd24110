import numpy as np
import pytest

from relkal import lie


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_element(rng, scale=2.0, batch=()):
    return lie.exp(rng.uniform(-scale, scale, tuple(batch) + (9,)))


def dense(g):
    """5x5 matrix of a group element, for oracle arithmetic."""
    return g.matrix()
