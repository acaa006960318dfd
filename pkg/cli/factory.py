"""
Builds core objects from the sections of an ExperimentSpec.

Functions:
    - region_from: Validated StrataRegion
    - model_from: StrataModel on a region
    - mesh_from: Mesh for a region and MeshSpec (or a bare edge length)
    - basis_from: Flux basis on a mesh
    - template_from: Unvalidated inversion template without interfaces
"""

from typing import Optional

from core.conductivity import StrataModel
from core.errors import StrataConfigError
from core.geometry import DEFAULT_GAP_FRACTION, Interface, StrataRegion, build_strata_region
from core.mesher import Mesh, mesh_region
from core.ndmap import FluxBasis, build_flux_basis
from models.specs import BasisSpec, MeshSpec, ModelSpec, StrataRegionSpec


def region_from(spec: Optional[StrataRegionSpec]) -> StrataRegion:
    if spec is None:
        raise StrataConfigError("experiment has no 'region' section")
    return build_strata_region(spec)


def model_from(region: StrataRegion, spec: Optional[ModelSpec]) -> StrataModel:
    if spec is None:
        raise StrataConfigError("experiment has no 'model' section")
    return StrataModel.from_spec(region, spec)


def mesh_from(region: StrataRegion, spec: MeshSpec, h: Optional[float] = None) -> Mesh:
    sublayers = spec.sublayers if spec.sublayers is not None else spec.sublayers_per_stratum
    return mesh_region(region, h if h is not None else spec.h, sublayers=sublayers)


def basis_from(mesh: Mesh, region: StrataRegion, spec: BasisSpec) -> FluxBasis:
    return build_flux_basis(mesh, region.sigma_patch_radius, spec.rings, spec.base_sectors)


def template_from(spec: Optional[StrataRegionSpec]) -> StrataRegion:
    """
    Inversion template: footprint, cap, top surface and patch of a region.

    Interfaces are dropped and nothing is validated, so a region section with
    no interfaces is accepted when the data come from a file.
    """
    if spec is None:
        raise StrataConfigError("experiment has no 'region' section")
    radius = float(spec.radius)
    return StrataRegion(
        radius=radius,
        cap_height=float(spec.cap_height),
        top_surface=Interface.from_spec(spec.top_surface, radius),
        interfaces=(),
        sigma_patch_radius=float(spec.sigma_patch_radius),
        footprint=spec.footprint,
        min_gap=float(spec.min_gap if spec.min_gap is not None else DEFAULT_GAP_FRACTION * spec.cap_height),
        sample_grid=int(spec.sample_grid),
    )
