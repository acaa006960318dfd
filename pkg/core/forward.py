"""
P1 finite-element Neumann solver for div(sigma grad u) = 0.

The pure Neumann problem sigma grad u . nu = psi on the boundary with the
normalisation int_{boundary} u = 0 is solved through the symmetric saddle-point
system

    [ A   m ] [ u  ]   [ b ]
    [ m^T 0 ] [ mu ] = [ 0 ]

with A the stiffness matrix, m_i = int_{boundary} theta_i the boundary mass of
vertex i, and b the load of the facet-wise constant flux densities. Small
systems are factorized once with SuperLU; large ones use Jacobi-preconditioned
CG on A followed by the zero-mean shift.

Classes:
    - BoundaryFlux: flux densities per boundary facet
    - StiffnessSystem: assembled matrix, boundary mass and solver state

Functions:
    - assemble: Stiffness system for a mesh and a conductivity
    - solve_neumann: Potential for one flux
    - solve_many: Potentials for several fluxes against one factorization
    - energy, boundary_trace, pairing
    - neumann_kernel_probe: Mollified Neumann kernel N_sigma(., y)
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import structlog
from scipy.sparse.linalg import LinearOperator, cg, splu

from core.conductivity import StrataModel
from core.errors import StrataSolverError, StrataValidationError
from core.mesher import Mesh
from core.settings import get_settings
from observability.metrics import (
    strata_assemblies_total,
    strata_assembly_duration_seconds,
    strata_factorizations_total,
    strata_forward_solves_total,
)
from observability.tracing import span

logger = structlog.get_logger(__name__)

Conductivity = Union[StrataModel, np.ndarray]

COMPATIBILITY_TOL = 1e-12
RESIDUAL_TOL = 1e-10


class TagOutOfRange(StrataSolverError):
    """Raised when a mesh region tag has no tensor in the model."""
    pass


class IncompatibleFlux(StrataSolverError):
    """Raised when a Neumann datum does not integrate to zero."""
    pass


class SolverDiverged(StrataSolverError):
    """Raised when a linear solve misses its residual tolerance."""
    pass


class SourceOffPatch(StrataSolverError):
    """Raised when a kernel probe source is not inside the Sigma patch."""
    pass


class ProbeUnderResolved(StrataValidationError):
    """Raised when a probe mollifier radius is below two mesh sizes."""
    pass


@dataclass(frozen=True, eq=False)
class BoundaryFlux:
    """
    Constant flux density (current per area) on every boundary facet.

    Attributes:
        densities: (F,) values indexed like mesh.boundary_facets
    """

    densities: np.ndarray

    @classmethod
    def zeros(cls, mesh: Mesh) -> "BoundaryFlux":
        return cls(np.zeros(mesh.boundary_facets.shape[0]))

    @classmethod
    def on_sigma(cls, mesh: Mesh, sigma_densities: np.ndarray) -> "BoundaryFlux":
        """Flux supported on Sigma, values ordered like mesh.sigma_facets."""
        dens = np.zeros(mesh.boundary_facets.shape[0])
        dens[mesh.sigma_facets] = sigma_densities
        return cls(dens)

    @classmethod
    def from_conormal(cls, mesh: Mesh, current: np.ndarray) -> "BoundaryFlux":
        """Flux of a constant current density vector J: J . nu on each facet."""
        return cls(mesh.outward_normals @ np.asarray(current, dtype=float))

    def total(self, mesh: Mesh) -> float:
        return float(self.densities @ mesh.facet_areas)

    def magnitude(self, mesh: Mesh) -> float:
        return float(np.abs(self.densities) @ mesh.facet_areas)

    def check_compatible(self, mesh: Mesh) -> None:
        """
        Raises:
            IncompatibleFlux: |sum d_f area_f| > 1e-12 * sum |d_f| area_f
        """
        total = self.total(mesh)
        if abs(total) > COMPATIBILITY_TOL * max(self.magnitude(mesh), np.finfo(float).tiny):
            raise IncompatibleFlux(f"net flux {total:.3e} is not zero")

    def load(self, mesh: Mesh) -> np.ndarray:
        """Nodal load b_i = int psi theta_i (exact for facet-constant psi)."""
        per_vertex = np.repeat(self.densities * mesh.facet_areas / 3.0, 3)
        return np.bincount(mesh.boundary_facets.ravel(), weights=per_vertex, minlength=mesh.n_vertices)

    def scaled(self, factor: float) -> "BoundaryFlux":
        return BoundaryFlux(factor * self.densities)

    def __add__(self, other: "BoundaryFlux") -> "BoundaryFlux":
        return BoundaryFlux(self.densities + other.densities)

    def __sub__(self, other: "BoundaryFlux") -> "BoundaryFlux":
        return BoundaryFlux(self.densities - other.densities)


@dataclass(eq=False)
class StiffnessSystem:
    """
    Assembled Neumann system for one mesh and conductivity.

    The factorization is created lazily on the first solve and is read-only
    afterwards, so concurrent solves may share it.
    """

    mesh: Mesh
    matrix: sp.csr_matrix
    boundary_mass: np.ndarray
    element_tensors: np.ndarray
    gradients: np.ndarray
    direct_solver_limit: int = 200_000
    cg_rtol: float = 1e-12
    _factor: Any = field(default=None, repr=False)

    @property
    def solver(self) -> str:
        return "direct" if self.mesh.n_vertices + 1 <= self.direct_solver_limit else "cg"

    def factorize(self) -> None:
        if self._factor is not None or self.solver != "direct":
            return
        n = self.mesh.n_vertices
        m = self.boundary_mass[:, None]
        saddle = sp.bmat(
            [[self.matrix, sp.csr_matrix(m)], [sp.csr_matrix(m.T), None]], format="csc"
        )
        with span("factorize_saddle_point", unknowns=n + 1):
            self._factor = splu(saddle)
        strata_factorizations_total.inc()
        logger.debug("saddle_point_factorized", unknowns=n + 1)


def p1_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the four barycentric basis functions per tet, (T, 4, 3)."""
    p = mesh.vertices[mesh.tets]
    edges = p[:, 1:] - p[:, :1]
    inv = np.linalg.inv(edges)
    grads = np.empty((mesh.n_tets, 4, 3))
    grads[:, 1:] = np.transpose(inv, (0, 2, 1))
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    return grads


def element_conductivity(mesh: Mesh, conductivity: Conductivity) -> np.ndarray:
    """
    Per-element tensors (T, 3, 3) from a model or an explicit per-element array.

    Raises:
        TagOutOfRange: A region tag exceeds the model's stratum count
    """
    if isinstance(conductivity, StrataModel):
        tags = mesh.region_tags
        if tags.min() < 1 or tags.max() > len(conductivity.tensors):
            raise TagOutOfRange(
                f"mesh tags span [{tags.min()}, {tags.max()}] but the model has "
                f"{len(conductivity.tensors)} strata"
            )
        return conductivity.element_tensors(tags)
    tensors = np.asarray(conductivity, dtype=float)
    if tensors.shape != (mesh.n_tets, 3, 3):
        raise TagOutOfRange(
            f"per-element tensors have shape {tensors.shape}, mesh has {mesh.n_tets} tets"
        )
    return tensors


def _assemble_range(mesh: Mesh, grads: np.ndarray, tensors: np.ndarray, lo: int, hi: int) -> sp.csr_matrix:
    g = grads[lo:hi]
    local = mesh.tet_volumes[lo:hi, None, None] * (g @ tensors[lo:hi] @ np.transpose(g, (0, 2, 1)))
    local = 0.5 * (local + np.transpose(local, (0, 2, 1)))
    tets = mesh.tets[lo:hi]
    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble(
    mesh: Mesh,
    model: Conductivity,
    threads: int = 1,
    chunk_size: int = 20_000,
    direct_solver_limit: Optional[int] = None,
) -> StiffnessSystem:
    """
    Assemble A_ij = int sigma grad theta_j . grad theta_i and the boundary mass.

    Args:
        mesh: Tetrahedral mesh
        model: StrataModel (looked up by region tag) or (T, 3, 3) per-element tensors
        threads: Worker threads; element chunks are summed in a fixed order
        chunk_size: Elements per chunk in threaded mode
        direct_solver_limit: Saddle-point size above which CG is used

    Raises:
        TagOutOfRange
    """
    settings = get_settings()
    start = time.perf_counter()
    tensors = element_conductivity(mesh, model)
    grads = p1_gradients(mesh)

    with span("assemble_stiffness", tets=mesh.n_tets, threads=threads):
        if threads <= 1 or mesh.n_tets <= chunk_size:
            matrix = _assemble_range(mesh, grads, tensors, 0, mesh.n_tets)
        else:
            bounds = list(range(0, mesh.n_tets, chunk_size)) + [mesh.n_tets]
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(
                    pool.map(
                        lambda lh: _assemble_range(mesh, grads, tensors, lh[0], lh[1]),
                        zip(bounds[:-1], bounds[1:]),
                    )
                )
            matrix = parts[0]
            for part in parts[1:]:
                matrix = matrix + part
        matrix = (0.5 * (matrix + matrix.T)).tocsr()

    area_share = np.repeat(mesh.facet_areas / 3.0, 3)
    mass = np.bincount(mesh.boundary_facets.ravel(), weights=area_share, minlength=mesh.n_vertices)

    elapsed = time.perf_counter() - start
    strata_assemblies_total.inc()
    strata_assembly_duration_seconds.observe(elapsed)
    logger.debug("stiffness_assembled", tets=mesh.n_tets, nnz=int(matrix.nnz), seconds=round(elapsed, 4))

    return StiffnessSystem(
        mesh=mesh,
        matrix=matrix,
        boundary_mass=mass,
        element_tensors=tensors,
        gradients=grads,
        direct_solver_limit=direct_solver_limit or settings.direct_solver_limit,
        cg_rtol=settings.cg_rtol,
    )


def _solve_load(sys: StiffnessSystem, b: np.ndarray) -> np.ndarray:
    n = sys.mesh.n_vertices
    if not np.any(b):
        return np.zeros(n)
    b_norm = float(np.linalg.norm(b))

    if sys.solver == "direct":
        sys.factorize()
        x = sys._factor.solve(np.concatenate([b, [0.0]]))
        u, mu = x[:n], float(x[n])
        strata_forward_solves_total.labels(solver="direct").inc()
    else:
        diag = sys.matrix.diagonal()
        precond = LinearOperator((n, n), matvec=lambda r: r / diag, dtype=float)
        u, info = cg(sys.matrix, b, rtol=sys.cg_rtol, atol=0.0, maxiter=10 * n, M=precond)
        if info != 0:
            raise SolverDiverged(f"CG stopped with info={info}")
        u = u - (sys.boundary_mass @ u) / sys.boundary_mass.sum()
        mu = 0.0
        strata_forward_solves_total.labels(solver="cg").inc()

    residual = float(np.linalg.norm(sys.matrix @ u + mu * sys.boundary_mass - b))
    if residual > RESIDUAL_TOL * b_norm:
        raise SolverDiverged(f"relative residual {residual / b_norm:.3e} exceeds {RESIDUAL_TOL:.0e}")
    return u


def solve_neumann(sys: StiffnessSystem, flux: BoundaryFlux) -> np.ndarray:
    """
    Nodal potential u with sigma grad u . nu = psi and int_{boundary} u = 0.

    Raises:
        IncompatibleFlux: psi has nonzero net flux
        SolverDiverged: Residual above 1e-10 relative
    """
    flux.check_compatible(sys.mesh)
    return _solve_load(sys, flux.load(sys.mesh))


def solve_many(sys: StiffnessSystem, fluxes: Sequence[BoundaryFlux], threads: int = 1) -> np.ndarray:
    """Potentials (m, N) for several fluxes; results keep the input order."""
    for flux in fluxes:
        flux.check_compatible(sys.mesh)
    loads = [flux.load(sys.mesh) for flux in fluxes]
    if not loads:
        return np.zeros((0, sys.mesh.n_vertices))
    sys.factorize()
    if threads <= 1:
        return np.vstack([_solve_load(sys, b) for b in loads])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.vstack(list(pool.map(lambda b: _solve_load(sys, b), loads)))


def energy(sys: StiffnessSystem, u: np.ndarray) -> float:
    """u^T A u = int sigma grad u . grad u."""
    return float(u @ (sys.matrix @ u))


def pairing(mesh: Mesh, flux: BoundaryFlux, u: np.ndarray) -> float:
    """<psi, u> = int_{boundary} psi u, exact for P1 traces."""
    return float(flux.load(mesh) @ u)


def boundary_trace(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Mean nodal value on every SIGMA facet."""
    return u[mesh.boundary_facets[mesh.sigma_facets]].mean(axis=1)


def boundary_mean(sys: StiffnessSystem, u: np.ndarray) -> float:
    return float(sys.boundary_mass @ u / sys.boundary_mass.sum())


def probe_flux(mesh: Mesh, source: np.ndarray, radius: float, patch_radius: float) -> BoundaryFlux:
    """
    Mollified unit source at y on Sigma minus the uniform density 1 / |boundary|.

    Raises:
        SourceOffPatch: The mollifier support leaves the patch or meets no facet
        ProbeUnderResolved: radius < 2 h
    """
    y = np.asarray(source, dtype=float)[:2]
    if np.hypot(*y) + radius > patch_radius:
        raise SourceOffPatch(
            f"source ({y[0]:.3f}, {y[1]:.3f}) with radius {radius:.3f} leaves the patch of radius {patch_radius:.3f}"
        )
    if radius < 2.0 * mesh.h:
        raise ProbeUnderResolved(f"mollifier radius {radius:.3f} is below 2 h = {2.0 * mesh.h:.3f}")
    sigma = mesh.sigma_facets
    centroids = mesh.facet_centroids[sigma, :2]
    t = np.linalg.norm(centroids - y, axis=1) / radius
    weight = np.where(t < 1.0, (1.0 - t**2) ** 2, 0.0)
    mass = float(weight @ mesh.facet_areas[sigma])
    if mass <= 0.0:
        raise SourceOffPatch("no SIGMA facet lies within the mollifier radius")

    densities = np.full(mesh.boundary_facets.shape[0], -1.0 / mesh.boundary_area)
    densities[sigma] += weight / mass
    return BoundaryFlux(densities)


def neumann_kernel_probe(sys: StiffnessSystem, source: np.ndarray, radius: float, patch_radius: float) -> np.ndarray:
    """
    Discrete approximation of N_sigma(., y): solve with the mollified probe datum.

    Raises:
        SourceOffPatch
        ProbeUnderResolved
    """
    flux = probe_flux(sys.mesh, source, radius, patch_radius)
    return solve_neumann(sys, flux)

