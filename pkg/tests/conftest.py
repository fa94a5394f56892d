import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def spd_voigt(rng, scale=1.0):
    """Random well-conditioned SPD tensor as a Voigt 6-vector."""
    from dfmup.fields import matrix_to_voigt
    a = rng.standard_normal((3, 3))
    m = a @ a.T + 3 * np.eye(3)
    return matrix_to_voigt(scale * m / np.trace(m) * 3)
