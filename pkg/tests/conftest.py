import numpy as np
import pytest

from quadvar.design import DensitySpec, build_design


@pytest.fixture
def uniform_design():
    def make(n, T=1.0):
        return build_design(DensitySpec.uniform(T), n, T)

    return make


@pytest.fixture
def affine_density():
    # psi(t) = (2/3)(1 + t) on [0, 1]
    return DensitySpec.affine(2.0 / 3.0, 2.0 / 3.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20241014)
