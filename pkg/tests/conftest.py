import math

import pytest

from slowmanifold.systems import complex_pair_test, linear_test, michaelis_menten

EPS = 0.01


@pytest.fixture
def linear_sys():
    return linear_test(1.0, 1.0, EPS)


@pytest.fixture
def mm_sys():
    return michaelis_menten(1.0, 1.0, EPS)


@pytest.fixture
def pair_factory():
    def make(theta_over_pi, modulus=1.0, epsilon=EPS, **kw):
        return complex_pair_test(modulus, theta_over_pi * math.pi, epsilon, **kw)
    return make
