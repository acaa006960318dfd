"""
Interface-conforming tetrahedral meshes of a StrataRegion.

Construction:
    1. Triangulate the footprint (concentric rings + Delaunay for the disk,
       a split structured grid for the square).
    2. Extrude every 2D vertex into a column whose levels follow the surfaces
       phi_0 .. phi_K and the cap M, with a number of sublayers per stratum.
    3. Split each prism into 3 tets using the global ordering of its column
       indices, which makes the diagonals of shared quad faces agree.
    4. Extract boundary facets by face counting, orient their normals away
       from the owning tet and tag the top-surface facets over |x'| <= r_Sigma
       as SIGMA.

Vertex (level l, column v) has index l * n_columns + v, so every interface
vertex lies exactly on its surface.
"""

import hashlib
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

from core.errors import StrataValidationError
from core.geometry import StrataRegion
from observability.metrics import strata_meshes_built_total

logger = structlog.get_logger(__name__)

# local face -> vertex positions; face i is opposite vertex i
_LOCAL_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


class ResolutionTooCoarse(StrataValidationError):
    """Raised when the edge length does not resolve the thinnest stratum."""
    pass


class MeshInvalid(StrataValidationError):
    """Raised when a mesh fails one of its structural invariants."""
    pass


class FacetTag(IntEnum):
    SIGMA = 1
    OTHER_BOUNDARY = 2


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Conforming tetrahedral mesh with stratum and boundary tags.

    Attributes:
        vertices: (N, 3) coordinates
        tets: (T, 4) vertex indices, positive orientation
        region_tags: (T,) stratum index 1..K+1
        boundary_facets: (F, 3) vertex indices, counter-clockwise seen from outside
        facet_tags: (F,) FacetTag values
        outward_normals: (F, 3) unit outward normals
        h: Target edge length used to build the mesh
        column_count: Vertices per level
        level_count: Number of vertex levels
    """

    vertices: np.ndarray
    tets: np.ndarray
    region_tags: np.ndarray
    boundary_facets: np.ndarray
    facet_tags: np.ndarray
    outward_normals: np.ndarray
    h: float
    column_count: int
    level_count: int

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_tets(self) -> int:
        return int(self.tets.shape[0])

    @property
    def layer_count(self) -> int:
        return int(self.region_tags.max())

    @cached_property
    def tet_volumes(self) -> np.ndarray:
        return _signed_volumes(self.vertices, self.tets)

    @cached_property
    def tet_centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    @cached_property
    def facet_areas(self) -> np.ndarray:
        p = self.vertices[self.boundary_facets]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    @cached_property
    def facet_centroids(self) -> np.ndarray:
        return self.vertices[self.boundary_facets].mean(axis=1)

    @cached_property
    def sigma_facets(self) -> np.ndarray:
        """Indices (into boundary_facets) of the SIGMA patch."""
        return np.nonzero(self.facet_tags == FacetTag.SIGMA)[0]

    @property
    def sigma_area(self) -> float:
        return float(self.facet_areas[self.sigma_facets].sum())

    @property
    def boundary_area(self) -> float:
        return float(self.facet_areas.sum())

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_facets)

    @cached_property
    def mesh_id(self) -> str:
        digest = hashlib.sha256()
        for array in (self.vertices, self.tets, self.region_tags, self.facet_tags):
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()[:16]

    def same_topology(self, other: "Mesh") -> bool:
        return (
            self.tets.shape == other.tets.shape
            and np.array_equal(self.tets, other.tets)
            and np.array_equal(self.region_tags, other.region_tags)
        )


def _signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    edges = p[:, 1:] - p[:, :1]
    return np.linalg.det(edges) / 6.0


def _triangulate_disk(radius: float, h: float) -> Tuple[np.ndarray, np.ndarray]:
    n_rings = max(1, int(np.ceil(radius / h)))
    points = [np.zeros((1, 2))]
    for i in range(1, n_rings + 1):
        r = radius * i / n_rings
        theta = 2.0 * np.pi * np.arange(6 * i) / (6 * i)
        points.append(r * np.column_stack([np.cos(theta), np.sin(theta)]))
    pts = np.vstack(points)
    triangles = Delaunay(pts).simplices.astype(np.int64)
    return pts, triangles


def _triangulate_square(half_width: float, h: float) -> Tuple[np.ndarray, np.ndarray]:
    n = max(1, int(np.ceil(2.0 * half_width / h)))
    axis = np.linspace(-half_width, half_width, n + 1)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[1:, :-1].ravel()
    v01 = idx[:-1, 1:].ravel()
    v11 = idx[1:, 1:].ravel()
    triangles = np.vstack(
        [np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])]
    ).astype(np.int64)
    return pts, triangles


def triangulate_footprint(region: StrataRegion, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """2D points (P, 2) and counter-clockwise triangles (T, 3) over the footprint."""
    if region.footprint == "square":
        pts, triangles = _triangulate_square(region.radius, h)
    else:
        pts, triangles = _triangulate_disk(region.radius, h)

    p = pts[triangles]
    doubled = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    keep = np.abs(doubled) > 1e-12 * region.radius**2
    triangles = triangles[keep]
    flip = doubled[keep] < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return pts, triangles


def resolve_sublayers(
    region: StrataRegion,
    column_heights: np.ndarray,
    h: float,
    sublayers: Optional[Union[int, Sequence[int]]],
) -> Tuple[int, ...]:
    """Sublayer count per stratum: explicit, uniform, or ceil(max thickness / h)."""
    if sublayers is None:
        thickness = np.diff(column_heights, axis=0).max(axis=1)
        return tuple(max(1, int(np.ceil(t / h - 1e-9))) for t in thickness)
    if isinstance(sublayers, int):
        return (sublayers,) * region.layer_count
    counts = tuple(int(n) for n in sublayers)
    if len(counts) != region.layer_count:
        raise ValueError(
            f"expected {region.layer_count} sublayer counts, got {len(counts)}"
        )
    return counts


def mesh_region(
    region: StrataRegion,
    h: float,
    sublayers: Optional[Union[int, Sequence[int]]] = None,
    check_resolution: bool = True,
) -> Mesh:
    """
    Build an interface-conforming tet mesh by prism extrusion.

    Args:
        region: Validated strata region
        h: Target edge length
        sublayers: Per-stratum sublayer counts (sequence), a uniform count (int),
            or None to derive them from h
        check_resolution: Raise when the thinnest stratum is thinner than h

    Returns:
        Mesh with SIGMA facets over |x'| <= region.sigma_patch_radius on phi_0

    Raises:
        ResolutionTooCoarse: Thinnest sampled stratum is thinner than h
    """
    if h <= 0:
        raise ValueError("h must be positive")

    thinnest = float(region.stratum_thickness().min())
    if thinnest < h and check_resolution:
        raise ResolutionTooCoarse(
            f"thinnest stratum is {thinnest:.3e} thick, below edge length h={h:.3e}"
        )
    if thinnest < 2.0 * h:
        logger.warning("stratum_thinner_than_two_h", thickness=thinnest, h=h)

    pts2d, triangles = triangulate_footprint(region, h)
    n_cols = pts2d.shape[0]
    heights = region.surface_heights(pts2d[:, 0], pts2d[:, 1])
    counts = resolve_sublayers(region, heights, h, sublayers)

    levels = [heights[0]]
    slab_tags = []
    for k, n_k in enumerate(counts):
        for j in range(1, n_k + 1):
            levels.append(heights[k] + (j / n_k) * (heights[k + 1] - heights[k]))
            slab_tags.append(k + 1)
    n_levels = len(levels)

    vertices = np.vstack(
        [np.column_stack([pts2d, z]) for z in levels]
    )

    ordered = np.sort(triangles, axis=1)
    a, b, c = ordered[:, 0], ordered[:, 1], ordered[:, 2]
    tet_blocks = []
    tag_blocks = []
    for level, tag in enumerate(slab_tags):
        lo = level * n_cols
        hi = (level + 1) * n_cols
        prisms = np.vstack(
            [
                np.column_stack([a + lo, b + lo, c + lo, a + hi]),
                np.column_stack([b + lo, c + lo, a + hi, b + hi]),
                np.column_stack([c + lo, a + hi, b + hi, c + hi]),
            ]
        )
        tet_blocks.append(prisms)
        tag_blocks.append(np.full(prisms.shape[0], tag, dtype=np.int64))
    tets = np.vstack(tet_blocks).astype(np.int64)
    region_tags = np.concatenate(tag_blocks)

    negative = _signed_volumes(vertices, tets) < 0
    tets[negative] = tets[negative][:, [1, 0, 2, 3]]

    facets, normals = _boundary_facets(vertices, tets)
    centroids = vertices[facets].mean(axis=1)
    on_top = np.all(facets < n_cols, axis=1)
    in_patch = np.hypot(centroids[:, 0], centroids[:, 1]) <= region.sigma_patch_radius
    facet_tags = np.where(on_top & in_patch, FacetTag.SIGMA, FacetTag.OTHER_BOUNDARY).astype(np.int64)

    mesh = Mesh(
        vertices=vertices,
        tets=tets,
        region_tags=region_tags,
        boundary_facets=facets,
        facet_tags=facet_tags,
        outward_normals=normals,
        h=float(h),
        column_count=n_cols,
        level_count=n_levels,
    )
    strata_meshes_built_total.inc()
    logger.debug(
        "mesh_built",
        vertices=mesh.n_vertices,
        tets=mesh.n_tets,
        sigma_facets=int(mesh.sigma_facets.size),
        sublayers=list(counts),
        h=h,
    )
    return mesh


def _face_table(tets: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All tet faces as sorted triples, with owning tet and local face index."""
    n = tets.shape[0]
    faces = np.concatenate([tets[:, f] for f in _LOCAL_FACES])
    owner = np.tile(np.arange(n), 4)
    local = np.repeat(np.arange(4), n)
    return np.sort(faces, axis=1), owner, local


def _boundary_facets(vertices: np.ndarray, tets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    sorted_faces, owner, local = _face_table(tets)
    _, first, counts = np.unique(sorted_faces, axis=0, return_index=True, return_counts=True)
    if counts.max() > 2:
        raise MeshInvalid("a facet is shared by more than two tets")
    picks = first[counts == 1]
    tet_ids = owner[picks]
    local_ids = local[picks]
    facets = tets[tet_ids[:, None], _LOCAL_FACES[local_ids]]
    opposite = vertices[tets[tet_ids, local_ids]]

    p = vertices[facets]
    normals = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    inward = np.einsum("ij,ij->i", normals, opposite - p[:, 0]) > 0
    normals[inward] *= -1.0
    facets[inward] = facets[inward][:, [0, 2, 1]]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return facets.astype(np.int64), normals


def interface_facets(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """
    Interior facets shared by tets of different strata.

    Returns:
        (facets (F, 3), k) where facet i lies on phi_k between strata k and k + 1
    """
    faces, owner, _ = _face_table(mesh.tets)
    order = np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))
    faces = faces[order]
    owner = owner[order]
    shared = np.nonzero(np.all(faces[1:] == faces[:-1], axis=1))[0]
    tag_a = mesh.region_tags[owner[shared]]
    tag_b = mesh.region_tags[owner[shared + 1]]
    crossing = tag_a != tag_b
    return faces[shared[crossing]], np.minimum(tag_a, tag_b)[crossing]


def check_mesh(mesh: Mesh, region: Optional[StrataRegion] = None, conformity_factor: float = 1.0) -> None:
    """
    Verify the structural mesh invariants.

    Checks positive volumes, at most two tets per facet, unit outward normals,
    a connected SIGMA patch on the top surface and, given the region, that
    facets between strata lie on their interface to conformity_factor * h^2.

    Raises:
        MeshInvalid: On the first violated invariant
    """
    if np.any(mesh.tet_volumes <= 0):
        raise MeshInvalid(f"{int(np.sum(mesh.tet_volumes <= 0))} tets have non-positive volume")

    _, _, counts = np.unique(_face_table(mesh.tets)[0], axis=0, return_index=True, return_counts=True)
    if counts.max() > 2:
        raise MeshInvalid("a facet is shared by more than two tets")

    norms = np.linalg.norm(mesh.outward_normals, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-12:
        raise MeshInvalid("outward normals are not unit length")

    owner_centroid = _facet_owner_centroids(mesh)
    outwards = np.einsum("ij,ij->i", mesh.outward_normals, mesh.facet_centroids - owner_centroid)
    if np.any(outwards <= 0):
        raise MeshInvalid("an outward normal points into the domain")

    sigma = mesh.boundary_facets[mesh.sigma_facets]
    if sigma.size == 0:
        raise MeshInvalid("no SIGMA facets")
    if np.any(sigma >= mesh.column_count):
        raise MeshInvalid("a SIGMA facet is not on the top surface")
    if _component_count(sigma) != 1:
        raise MeshInvalid("SIGMA facets do not form a connected patch")

    if region is not None:
        faces, ks = interface_facets(mesh)
        tol = conformity_factor * mesh.h**2
        for k in np.unique(ks):
            iface = region.interfaces[int(k) - 1]
            pts = mesh.vertices[np.unique(faces[ks == k])]
            gap = np.abs(pts[:, 2] - iface.evaluate(pts[:, 0], pts[:, 1]))
            if gap.max() > tol:
                raise MeshInvalid(f"facets between strata {k} and {k + 1} leave phi_{k} by {gap.max():.3e}")


def _facet_owner_centroids(mesh: Mesh) -> np.ndarray:
    sorted_faces, owner, _ = _face_table(mesh.tets)
    keys, first = np.unique(sorted_faces, axis=0, return_index=True)
    wanted = np.sort(mesh.boundary_facets, axis=1)
    pos = _row_lookup(keys, wanted)
    return mesh.tet_centroids[owner[first[pos]]]


def _row_lookup(keys: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Positions of rows inside lexicographically sorted, unique keys."""
    width = int(max(keys.max(), rows.max())) + 1
    key_codes = (keys[:, 0] * width + keys[:, 1]) * width + keys[:, 2]
    row_codes = (rows[:, 0] * width + rows[:, 1]) * width + rows[:, 2]
    return np.searchsorted(key_codes, row_codes)


def _component_count(facets: np.ndarray) -> int:
    """Connected components of a facet set under shared edges."""
    edges = np.concatenate([facets[:, [0, 1]], facets[:, [1, 2]], facets[:, [0, 2]]])
    edges = np.sort(edges, axis=1)
    owner = np.tile(np.arange(facets.shape[0]), 3)
    _, edge_id = np.unique(edges, axis=0, return_inverse=True)
    edge_id = np.asarray(edge_id).ravel()
    incidence = coo_matrix(
        (np.ones(owner.size), (owner, edge_id)), shape=(facets.shape[0], edge_id.max() + 1)
    ).tocsr()
    adjacency = incidence @ incidence.T
    n_components, _ = connected_components(adjacency, directed=False)
    return int(n_components)
