import numpy as np
import pytest

from cmjsim import (
    Fragmentation,
    GaltonWatson,
    PoissonIntensity,
)


@pytest.fixture
def gw_two():
    """Deterministic binary branching: every node has exactly two children."""
    return GaltonWatson((0.0, 0.0, 1.0))


@pytest.fixture
def gw_vector():
    """Offspring vector (0.1, 0.3, 0.6) on {0,1,2}: mean 1.5."""
    return GaltonWatson((0.1, 0.3, 0.6))


@pytest.fixture
def frag_half():
    """Deterministic dislocation (1/2, 1/2): lattice with span log 2."""
    return Fragmentation(((1.0, (0.5, 0.5)),))


@pytest.fixture
def frag_mixture():
    """Two dislocation vectors with incommensurable offsets: non-lattice."""
    return Fragmentation(((0.5, (0.5, 0.5)), (0.5, (0.3, 0.7))))


@pytest.fixture
def poisson_rrt():
    """Unit-rate Poisson births: random recursive trees."""
    return PoissonIntensity(1.0, 0)


@pytest.fixture
def poisson_binary():
    return PoissonIntensity(2.0, -1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
