"""
Pytest configuration for strata-eit tests.

Session fixtures build the small two-layer region, model, mesh and flux
basis shared by the unit tests. Metrics go to a private registry because
PYTEST_CURRENT_TEST is set while tests run.
"""

import pytest

from core.conductivity import StrataModel
from core.geometry import StrataRegion
from core.mesher import Mesh, mesh_region
from core.ndmap import FluxBasis, build_flux_basis
from tests.utils.builders import BASIS_RINGS, BASIS_SECTORS, PATCH_RADIUS, UNIT_H, make_model, make_region


@pytest.fixture(scope="session")
def two_layer_region() -> StrataRegion:
    return make_region()


@pytest.fixture(scope="session")
def two_layer_model(two_layer_region) -> StrataModel:
    return make_model(two_layer_region)


@pytest.fixture(scope="session")
def unit_mesh(two_layer_region) -> Mesh:
    return mesh_region(two_layer_region, UNIT_H, sublayers=2)


@pytest.fixture(scope="session")
def unit_basis(unit_mesh) -> FluxBasis:
    return build_flux_basis(unit_mesh, PATCH_RADIUS, BASIS_RINGS, BASIS_SECTORS)
