import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def within_sigmas(observed, n, prob, sigmas=3.0):
    """Binomial check: a count of ``observed`` out of ``n`` at rate ``prob``."""
    sd = np.sqrt(n * prob * (1 - prob))
    return abs(observed - n * prob) <= sigmas * max(sd, 1e-12)
