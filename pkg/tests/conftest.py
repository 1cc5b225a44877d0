import pytest

from material import MaterialParams, TubeGeometry, UniformState


@pytest.fixture
def material():
    return MaterialParams(mu=1.0, Jm=30.0)


@pytest.fixture
def geometry():
    return TubeGeometry(R=1.0, rho=1.0, H=1.0)


@pytest.fixture
def small_state(material, geometry):
    """Small-amplitude working state r = 1.69, z' = 1.1."""
    return UniformState.at_equilibrium(1.69, 1.1, material, geometry)


@pytest.fixture
def moderate_state(material, geometry):
    """Moderate-amplitude working state r = 1.55, z' = 1.1."""
    return UniformState.at_equilibrium(1.55, 1.1, material, geometry)
