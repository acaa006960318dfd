"""
Discrete Neumann-to-Dirichlet maps on the Sigma patch.

Classes:
    - FluxBasis: zero-mean dipole patterns of facet-group indicators on Sigma
    - NDMatrix: N_ij = <psi_i, N_sigma psi_j> with provenance ids
    - AlessandriniGap: both sides of the discrete Alessandrini identity

Functions:
    - build_flux_basis: Polar facet groups over Sigma and their dipole differences
    - build_nd: One forward solve per pattern, surface pairing by exact quadrature
    - alessandrini_gap: <psi_i, (N2 - N1) psi_j> against int (sigma1 - sigma2) grad u1 . grad u2
    - distinguishability: Relative Frobenius distance of two N-D matrices
    - gauge_counterexample_gap: N-D gap between sigma and its diffeo re-gauge
    - local_pairing, global_pairing, restrict_to_patch: Sigma-only vs full pairing
"""

import hashlib
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Tuple, Union

import numpy as np
import structlog

from core.conductivity import AnisoTensor, StrataModel
from core.diffeo import Diffeo
from core.errors import StrataSolverError, StrataValidationError
from core.forward import (
    BoundaryFlux,
    Conductivity,
    StiffnessSystem,
    assemble,
    boundary_trace,
    element_conductivity,
    solve_many,
)
from core.mesher import Mesh
from observability.metrics import strata_nd_builds_total
from observability.tracing import span

logger = structlog.get_logger(__name__)

SYMMETRY_TOL = 1e-10
GRAM_CONDITION_LIMIT = 1e8


class BasisDegenerate(StrataSolverError):
    """Raised when flux patterns are (numerically) linearly dependent."""
    pass


class MeshMismatch(StrataSolverError):
    """Raised when two conductivities do not live on the same mesh."""
    pass


class BasisMismatch(StrataSolverError):
    """Raised when N-D matrices built on different bases are compared."""
    pass


class NDMatrixInvalid(StrataSolverError):
    """Raised when an N-D matrix is not symmetric positive definite."""
    pass


class NotBoundaryFixing(StrataValidationError):
    """Raised when a diffeo moves the boundary or its Jacobian there is not I."""
    pass


@dataclass(frozen=True, eq=False)
class FluxBasis:
    """
    Zero-mean flux patterns on Sigma.

    Attributes:
        patterns: (m, F) densities over all boundary facets of the mesh
        groups: (G, n_sigma) bool membership of Sigma facets in the facet groups
        basis_id: Geometric fingerprint (patch layout + Sigma facet centroids)
        patch: Name of the supporting patch
    """

    patterns: np.ndarray
    groups: np.ndarray
    basis_id: str
    patch: str = "sigma"

    @property
    def size(self) -> int:
        return int(self.patterns.shape[0])

    def fluxes(self) -> List[BoundaryFlux]:
        return [BoundaryFlux(p) for p in self.patterns]

    def gram(self, mesh: Mesh) -> np.ndarray:
        """Surface L2 Gram matrix of the patterns."""
        return (self.patterns * mesh.facet_areas) @ self.patterns.T

    def check(self, mesh: Mesh) -> "FluxBasis":
        """
        Raises:
            BasisDegenerate: Nonzero net flux, or Gram condition >= 1e8
        """
        areas = mesh.facet_areas
        totals = self.patterns @ areas
        scale = np.abs(self.patterns) @ areas
        if np.any(np.abs(totals) > 1e-12 * scale):
            raise BasisDegenerate("a flux pattern has nonzero net flux")
        cond = float(np.linalg.cond(self.gram(mesh)))
        if not np.isfinite(cond) or cond >= GRAM_CONDITION_LIMIT:
            raise BasisDegenerate(f"Gram condition number {cond:.3e} >= {GRAM_CONDITION_LIMIT:.0e}")
        return self

    def extend(self, mesh: Mesh, extra: np.ndarray) -> "FluxBasis":
        """Append patterns; existing patterns and their order are kept."""
        patterns = np.vstack([self.patterns, np.atleast_2d(extra)])
        digest = hashlib.sha256(self.basis_id.encode())
        digest.update(np.ascontiguousarray(extra).tobytes())
        return replace(self, patterns=patterns, basis_id=digest.hexdigest()[:16]).check(mesh)


def facet_groups(mesh: Mesh, patch_radius: float, rings: int = 3, base_sectors: int = 5) -> np.ndarray:
    """
    Polar groups of Sigma facets: equal-area rings, ring i split into
    base_sectors * (i + 1) sectors. Empty groups are dropped.

    Returns:
        (G, n_sigma) bool membership
    """
    centroids = mesh.facet_centroids[mesh.sigma_facets, :2]
    radius = np.hypot(centroids[:, 0], centroids[:, 1])
    angle = np.mod(np.arctan2(centroids[:, 1], centroids[:, 0]), 2.0 * np.pi)
    ring = np.minimum((rings * (radius / patch_radius) ** 2).astype(int), rings - 1)

    groups = []
    for i in range(rings):
        sectors = base_sectors * (i + 1)
        sector = np.minimum((angle * sectors / (2.0 * np.pi)).astype(int), sectors - 1)
        for j in range(sectors):
            member = (ring == i) & (sector == j)
            if member.any():
                groups.append(member)
    return np.array(groups, dtype=bool)


def build_flux_basis(
    mesh: Mesh,
    patch_radius: float,
    rings: int = 3,
    base_sectors: int = 5,
) -> FluxBasis:
    """
    Dipole basis psi_j = I_{g_j} - I_{g_{j+1}} of area-normalised group indicators.

    Raises:
        BasisDegenerate: Fewer than two groups, or a degenerate Gram matrix
    """
    groups = facet_groups(mesh, patch_radius, rings, base_sectors)
    if groups.shape[0] < 2:
        raise BasisDegenerate(f"only {groups.shape[0]} non-empty facet group on Sigma")

    sigma = mesh.sigma_facets
    areas = mesh.facet_areas[sigma]
    indicators = np.zeros((groups.shape[0], mesh.boundary_facets.shape[0]))
    for g, member in enumerate(groups):
        indicators[g, sigma[member]] = 1.0 / areas[member].sum()
    patterns = indicators[:-1] - indicators[1:]

    centroids = np.round(mesh.facet_centroids[sigma, :2], 9)
    digest = hashlib.sha256(f"{rings}:{base_sectors}:{patch_radius!r}".encode())
    digest.update(np.ascontiguousarray(centroids).tobytes())
    basis = FluxBasis(patterns=patterns, groups=groups, basis_id=digest.hexdigest()[:16])
    basis.check(mesh)
    logger.debug("flux_basis_built", groups=int(groups.shape[0]), patterns=basis.size)
    return basis


@dataclass(frozen=True, eq=False)
class NDMatrix:
    """Discrete local N-D matrix with provenance."""

    values: np.ndarray
    mesh_id: str
    model_id: str
    basis_id: str

    @property
    def size(self) -> int:
        return int(self.values.shape[0])

    def symmetry_error(self) -> float:
        return float(np.linalg.norm(self.values - self.values.T) / np.linalg.norm(self.values))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.values + self.values.T))

    def check(self) -> "NDMatrix":
        """
        Raises:
            NDMatrixInvalid: Not symmetric to 1e-10, or not positive definite
        """
        if not np.all(np.isfinite(self.values)):
            raise NDMatrixInvalid("N-D matrix has non-finite entries")
        sym = self.symmetry_error()
        if sym > SYMMETRY_TOL:
            raise NDMatrixInvalid(f"N-D matrix asymmetry {sym:.3e} exceeds {SYMMETRY_TOL:.0e}")
        low = float(self.eigenvalues()[0])
        if low <= 0.0:
            raise NDMatrixInvalid(f"N-D matrix is not positive definite (min eigenvalue {low:.3e})")
        return self


def conductivity_id(conductivity: Conductivity) -> str:
    if isinstance(conductivity, StrataModel):
        return conductivity.model_id
    return hashlib.sha256(np.ascontiguousarray(conductivity).tobytes()).hexdigest()[:16]


def _check_same_mesh(mesh: Mesh, conductivity: Conductivity) -> None:
    if isinstance(conductivity, StrataModel):
        if conductivity.region.layer_count != mesh.layer_count:
            raise MeshMismatch(
                f"model has {conductivity.region.layer_count} strata, mesh has {mesh.layer_count}"
            )
    elif np.shape(conductivity) != (mesh.n_tets, 3, 3):
        raise MeshMismatch(
            f"per-element tensors have shape {np.shape(conductivity)}, mesh has {mesh.n_tets} tets"
        )


def potentials_for(
    mesh: Mesh, conductivity: Conductivity, basis: FluxBasis, threads: int = 1
) -> Tuple[StiffnessSystem, np.ndarray]:
    """Assembled system and the potentials (m, N) of every basis pattern."""
    sys = assemble(mesh, conductivity, threads=threads)
    return sys, solve_many(sys, basis.fluxes(), threads=threads)


def global_pairing(mesh: Mesh, basis: FluxBasis, potentials: np.ndarray) -> np.ndarray:
    """<psi_i, u_j> over the whole boundary."""
    loads = np.vstack([flux.load(mesh) for flux in basis.fluxes()])
    return loads @ potentials.T


def local_pairing(mesh: Mesh, basis: FluxBasis, potentials: np.ndarray) -> np.ndarray:
    """<psi_i, u_j> from Sigma data only: pattern values and Sigma facet traces."""
    sigma = mesh.sigma_facets
    weighted = basis.patterns[:, sigma] * mesh.facet_areas[sigma]
    traces = np.vstack([boundary_trace(mesh, u) for u in potentials])
    return weighted @ traces.T


def restrict_to_patch(mesh: Mesh, basis: FluxBasis, potentials: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """
    Local N-D map from Sigma data, checked against the global pairing.

    Raises:
        NDMatrixInvalid: The two pairings differ by more than tol (relative)
    """
    local = local_pairing(mesh, basis, potentials)
    full = global_pairing(mesh, basis, potentials)
    gap = float(np.linalg.norm(local - full) / max(np.linalg.norm(full), np.finfo(float).tiny))
    if gap > tol:
        raise NDMatrixInvalid(f"local and global pairings differ by {gap:.3e}")
    return local


def build_nd(
    mesh: Mesh,
    model: Conductivity,
    basis: FluxBasis,
    threads: int = 1,
    check: bool = True,
) -> NDMatrix:
    """
    N-D matrix of a conductivity on a mesh.

    Args:
        mesh: Mesh whose Sigma facets carry the basis
        model: StrataModel or per-element tensors
        basis: Flux basis built on this mesh
        threads: Concurrent solves against the shared factorization
        check: Verify symmetry and positive definiteness

    Raises:
        Propagated solver errors; NDMatrixInvalid when check is set
    """
    if basis.patterns.shape[1] != mesh.boundary_facets.shape[0]:
        raise BasisMismatch("flux basis was built on a different mesh")
    with span("build_nd", patterns=basis.size, tets=mesh.n_tets):
        _, potentials = potentials_for(mesh, model, basis, threads=threads)
        values = global_pairing(mesh, basis, potentials)
    nd = NDMatrix(values=values, mesh_id=mesh.mesh_id, model_id=conductivity_id(model), basis_id=basis.basis_id)
    strata_nd_builds_total.inc()
    if check:
        nd.check()
    logger.debug("nd_matrix_built", size=nd.size, symmetry_error=nd.symmetry_error())
    return nd


class AlessandriniGap(NamedTuple):
    lhs: np.ndarray
    rhs: np.ndarray
    residual: float


def element_gradients(sys: StiffnessSystem, potentials: np.ndarray) -> np.ndarray:
    """Constant P1 gradients (m, T, 3) of each potential."""
    nodal = potentials[:, sys.mesh.tets]
    return np.einsum("mta,tad->mtd", nodal, sys.gradients)


def alessandrini_gap(
    mesh: Mesh,
    model1: Conductivity,
    model2: Conductivity,
    basis: FluxBasis,
    threads: int = 1,
) -> AlessandriniGap:
    """
    Both sides of <psi_i, (N2 - N1) psi_j> = int (sigma1 - sigma2) grad u1_i . grad u2_j.

    The residual is |lhs - rhs|_F / max(|lhs|_F, 1e-12 |N1|_F).

    Raises:
        MeshMismatch: A conductivity does not match the mesh
    """
    _check_same_mesh(mesh, model1)
    _check_same_mesh(mesh, model2)

    sys1, u1 = potentials_for(mesh, model1, basis, threads)
    sys2, u2 = potentials_for(mesh, model2, basis, threads)
    n1 = global_pairing(mesh, basis, u1)
    n2 = global_pairing(mesh, basis, u2)
    lhs = n2 - n1

    diff = (element_conductivity(mesh, model1) - element_conductivity(mesh, model2)) * mesh.tet_volumes[:, None, None]
    grad1 = element_gradients(sys1, u1)
    grad2 = element_gradients(sys2, u2)
    weighted = np.einsum("itd,tde->ite", grad1, diff)
    rhs = np.einsum("ite,jte->ij", weighted, grad2)

    floor = 1e-12 * max(float(np.linalg.norm(n1)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(lhs - rhs) / max(float(np.linalg.norm(lhs)), floor))
    logger.debug("alessandrini_gap_computed", residual=residual, lhs_norm=float(np.linalg.norm(lhs)))
    return AlessandriniGap(lhs=lhs, rhs=rhs, residual=residual)


def distinguishability(nd1: NDMatrix, nd2: NDMatrix) -> float:
    """
    |N1 - N2|_F / |N1|_F.

    Raises:
        BasisMismatch: Different basis ids or shapes
    """
    if nd1.basis_id != nd2.basis_id or nd1.values.shape != nd2.values.shape:
        raise BasisMismatch(f"bases differ: {nd1.basis_id} vs {nd2.basis_id}")
    return float(np.linalg.norm(nd1.values - nd2.values) / np.linalg.norm(nd1.values))


def check_boundary_fixing(mesh: Mesh, psi: Diffeo, tol: float = 1e-12) -> None:
    """
    Raises:
        NotBoundaryFixing: psi moves a boundary vertex or D psi != I there
    """
    if not psi.boundary_fixing:
        raise NotBoundaryFixing(f"{psi.name} does not fix the lateral boundary")
    pts = mesh.vertices[mesh.boundary_vertices]
    moved = float(np.abs(psi.apply(pts) - pts).max())
    bent = float(np.abs(psi.jacobian(pts) - np.eye(3)).max())
    if moved > tol or bent > tol:
        raise NotBoundaryFixing(f"{psi.name} moves the boundary by {moved:.3e} (Jacobian defect {bent:.3e})")


def regauged_tensors(mesh: Mesh, sigma: Union[AnisoTensor, StrataModel], psi: Diffeo) -> np.ndarray:
    """
    Per-element D psi sigma_e D psi^T / det D psi at p = psi^{-1}(centroid).

    sigma_e is the element's own stratum tensor, so interfaces stay in place.
    """
    if isinstance(sigma, AnisoTensor):
        base = np.repeat(sigma.matrix[None], mesh.n_tets, axis=0)
    else:
        base = element_conductivity(mesh, sigma)
    pre = psi.inverse(mesh.tet_centroids)
    jac = psi.jacobian(pre)
    det = np.linalg.det(jac)
    pushed = jac @ base @ np.transpose(jac, (0, 2, 1)) / det[:, None, None]
    return 0.5 * (pushed + np.transpose(pushed, (0, 2, 1)))


def gauge_counterexample_gap(
    mesh: Mesh,
    sigma_const: Union[AnisoTensor, StrataModel],
    psi: Diffeo,
    basis: FluxBasis,
    threads: int = 1,
) -> float:
    """
    Distinguishability between sigma and its boundary-fixing re-gauge.

    For a constant tensor, or flat strata under a tangential psi, the continuum
    gap is zero and the discrete gap shrinks under refinement. When psi moves
    points across a sloped interface the layer-held re-gauge differs from
    sigma on a sliver of thickness about |a| b |grad phi|, and the gap levels
    off at that sliver's effect instead. See converges_under_refinement and
    stabilizes_under_refinement for the checks applied to a resolution series.

    Raises:
        NotBoundaryFixing
    """
    check_boundary_fixing(mesh, psi)
    if isinstance(sigma_const, AnisoTensor):
        reference: Conductivity = np.repeat(sigma_const.matrix[None], mesh.n_tets, axis=0)
    else:
        reference = sigma_const
    pushed = regauged_tensors(mesh, sigma_const, psi)
    nd_ref = build_nd(mesh, reference, basis, threads=threads)
    nd_pushed = build_nd(mesh, pushed, basis, threads=threads)
    gap = distinguishability(nd_ref, nd_pushed)
    logger.info("gauge_gap_computed", diffeo=psi.name, h=mesh.h, gap=gap)
    return gap


def converges_under_refinement(gaps: List[float], ratios: List[float], ratio_limit: float, floor: float) -> bool:
    """Every refinement step shrinks the gap by ratio_limit, or the finer gap is already below floor."""
    if not ratios:
        return bool(gaps) and max(gaps) <= floor
    return all(r <= ratio_limit or fine <= floor for r, fine in zip(ratios, gaps[1:]))


def stabilizes_under_refinement(gaps: List[float], ratios: List[float], ratio_limit: float, floor: float) -> bool:
    """Every gap stays above floor and the last refinement step no longer shrinks it at the convergence rate."""
    if not ratios:
        return False
    return min(gaps) >= floor and ratios[-1] > ratio_limit
