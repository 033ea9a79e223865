import numpy as np
import pytest

from covrel.interval import rounding


@pytest.fixture(params=["ulp", "directed"])
def mode(request):
    with rounding(request.param):
        yield request.param


def random_floats(rng, n, emin=-20, emax=20):
    """Floats spread over many binades, both signs, a few exact zeros."""
    m = rng.uniform(0.5, 1.0, n) * rng.choice([-1.0, 1.0], n)
    x = np.ldexp(m, rng.integers(emin, emax, n))
    x[rng.random(n) < 0.02] = 0.0
    return x
