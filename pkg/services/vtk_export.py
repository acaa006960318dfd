"""
Legacy ASCII VTK export of meshes and nodal fields.

Tets and boundary facets are written as two cell blocks; "region" carries the
stratum tag of each tet (0 on facets) and "facet_tag" the FacetTag of each
boundary facet (0 on tets). Potentials go out as point data.
"""

from pathlib import Path
from typing import Dict, Optional

import meshio
import numpy as np
import structlog

from core.mesher import Mesh

logger = structlog.get_logger(__name__)


def to_meshio(mesh: Mesh, point_fields: Optional[Dict[str, np.ndarray]] = None) -> meshio.Mesh:
    n_tets = mesh.n_tets
    n_facets = mesh.boundary_facets.shape[0]
    point_data = {}
    for name, values in (point_fields or {}).items():
        values = np.asarray(values, dtype=float)
        if values.shape[0] != mesh.n_vertices:
            raise ValueError(f"field '{name}' has {values.shape[0]} values for {mesh.n_vertices} vertices")
        point_data[name] = values
    return meshio.Mesh(
        points=mesh.vertices,
        cells=[("tetra", mesh.tets), ("triangle", mesh.boundary_facets)],
        point_data=point_data,
        cell_data={
            "region": [mesh.region_tags.astype(np.int32), np.zeros(n_facets, dtype=np.int32)],
            "facet_tag": [np.zeros(n_tets, dtype=np.int32), mesh.facet_tags.astype(np.int32)],
        },
    )


def write_mesh_vtk(path: Path, mesh: Mesh, point_fields: Optional[Dict[str, np.ndarray]] = None) -> Path:
    """Write a mesh (and optional nodal fields) as legacy ASCII VTK."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meshio.write(str(path), to_meshio(mesh, point_fields), file_format="vtk", binary=False)
    logger.debug("vtk_written", path=str(path), fields=sorted((point_fields or {}).keys()))
    return path


def read_mesh_vtk(path: Path) -> meshio.Mesh:
    return meshio.read(str(path), file_format="vtk")
