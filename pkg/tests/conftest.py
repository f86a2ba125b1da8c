import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "lab",
    max_examples=20,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("lab")


@pytest.fixture(scope="session")
def Q3():
    from snlslab.ground_state import solve_ground_state
    return solve_ground_state(3.0, 1)


@pytest.fixture(scope="session")
def Q5():
    from snlslab.ground_state import solve_ground_state
    return solve_ground_state(5.0, 1)


@pytest.fixture(scope="session")
def Q2():
    from snlslab.ground_state import solve_ground_state
    return solve_ground_state(2.0, 1)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
