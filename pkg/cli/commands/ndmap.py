"""ndmap: build the local N-D matrix and its identity checks."""

from typing import Optional

import numpy as np
import structlog

from cli.factory import basis_from, mesh_from, model_from, region_from
from core.conductivity import StrataModel
from core.geometry import StrataRegion, split_stratum
from core.mesher import check_mesh, mesh_region
from core.ndmap import build_flux_basis, build_nd, distinguishability, potentials_for, restrict_to_patch
from models.reports import NDMapReport
from models.specs import ExperimentSpec, MeshSpec
from services.artifacts import ArtifactWriter

logger = structlog.get_logger(__name__)


def invisible_interface_gap(
    region: StrataRegion, model: StrataModel, mesh_spec: MeshSpec, rings: int, base_sectors: int, threads: int
) -> float:
    """
    Split the deepest stratum with an equal-tensor interface and compare N-D matrices.

    Both conductivities live on the mesh of the split region: one carries the
    split model, the other the original model looked up at element centroids.
    """
    split = split_stratum(region, region.layer_count)
    split_model = StrataModel(
        region=split,
        tensors=model.tensors + (model.tensors[-1],),
        ellipticity=model.ellipticity,
        jump_tolerance=0.0,
    )
    mesh = mesh_region(split, mesh_spec.h, sublayers=mesh_spec.sublayers_per_stratum, check_resolution=False)
    basis = build_flux_basis(mesh, region.sigma_patch_radius, rings, base_sectors)
    original = model.element_tensors(region.layer_of(mesh.tet_centroids))
    nd_split = build_nd(mesh, split_model, basis, threads=threads)
    nd_original = build_nd(mesh, original, basis, threads=threads)
    return distinguishability(nd_split, nd_original)


def run(spec: ExperimentSpec, writer: ArtifactWriter, seed: Optional[int], threads: int) -> None:
    region = region_from(spec.region)
    model = model_from(region, spec.model)
    mesh = mesh_from(region, spec.mesh)
    check_mesh(mesh, region)
    basis = basis_from(mesh, region, spec.basis)

    nd = build_nd(mesh, model, basis, threads=threads)
    _, potentials = potentials_for(mesh, model, basis, threads=threads)
    local = restrict_to_patch(mesh, basis, potentials)
    local_gap = float(np.linalg.norm(local - nd.values) / np.linalg.norm(nd.values))

    invisible = invisible_interface_gap(
        region, model, spec.mesh, spec.basis.rings, spec.basis.base_sectors, threads
    )
    eig = nd.eigenvalues()
    report = NDMapReport(
        size=nd.size,
        mesh_id=nd.mesh_id,
        model_id=nd.model_id,
        basis_id=nd.basis_id,
        symmetry_error=nd.symmetry_error(),
        min_eigenvalue=float(eig[0]),
        max_eigenvalue=float(eig[-1]),
        local_global_gap=local_gap,
        invisible_interface_gap=invisible,
    )
    writer.write_matrix("nd.csv", nd)
    writer.write_report("ndmap.json", report)
    logger.info("ndmap_experiment_finished", size=nd.size, symmetry_error=report.symmetry_error, invisible_gap=invisible)
