import numpy as np
import pytest

from perheat.causal import TimeGrid
from perheat.geometry import BoundaryMap, ReferenceShape, build_grid
from perheat.kernel import LatticeSumConfig, PeriodicityCell


@pytest.fixture(scope="session")
def cell():
    return PeriodicityCell((1.0, 1.0))


@pytest.fixture(scope="session")
def cfg():
    return LatticeSumConfig()


@pytest.fixture(scope="session")
def circle():
    return ReferenceShape.circle()


@pytest.fixture(scope="session")
def tilted(circle):
    """A sheared, shifted circle: a generic smooth curve with exact geometry."""
    return BoundaryMap.affine(circle, [[1.1, 0.1], [0.0, 0.9]], [-0.05, 0.03])


@pytest.fixture(scope="session")
def small(circle, tilted, cell):
    """Small boundary/time grid shared by the cheap tests."""
    return build_grid(circle, tilted, 32, cell), TimeGrid(0.5, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
