import numpy as np
import pytest

from ustatlab import FiniteChain, ergodicity_constants
from ustatlab.kernels import ProductKernel, kernel_family


@pytest.fixture(scope="session")
def two_state():
    return FiniteChain(P=np.array([[0.9, 0.1], [0.2, 0.8]]))


@pytest.fixture(scope="session")
def two_state_constants(two_state):
    return ergodicity_constants(two_state)


@pytest.fixture(scope="session")
def iid_coin():
    return FiniteChain(P=np.array([[0.5, 0.5], [0.5, 0.5]]))


@pytest.fixture
def ff_kernel():
    """f (x) f (y) with f = (1, -2), the invariant-law-degenerate eigenkernel."""
    def make(n):
        return kernel_family(ProductKernel(f=np.array([1.0, -2.0])), n)
    return make


def random_mixing_chain(rng, max_states=5, floor=0.02):
    """Random row-stochastic matrix with entries bounded away from 0."""
    S = int(rng.integers(2, max_states + 1))
    P = rng.random((S, S)) + floor
    P /= P.sum(axis=1, keepdims=True)
    return FiniteChain(P=P)


def random_table_kernel(rng, S, n, scale=2.0):
    from ustatlab.kernels import TableKernel
    return kernel_family(TableKernel(scale * (rng.random((S, S)) - 0.5)), n)
