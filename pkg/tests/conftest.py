import numpy as np
import pytest

from cyclicqm.kernels import matrix_factor


def random_factors(rng, n_states, n_steps, low=0.1):
    """Strictly positive random transfer tables with unit weight."""
    return [matrix_factor(low + rng.random((n_states, n_states))) for _ in range(n_steps)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
