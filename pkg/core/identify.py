"""
Tensor identification from tangential metric data and from N-D data.

Classes:
    - TangentialSample: point, unit normal and the observed 2x2 tangential metric

Functions:
    - sample_tangential: Oracle samples of metric_of(sigma) on given normals
    - recover_tensor_from_tangential: Stacked least squares for g, then sigma
    - spd_project: Clamp eigenvalues into the ellipticity interval
    - fit_homogeneous: Gauss-Newton fit of one constant tensor to N-D data
    - fit_top_tensor: Same fit, returning the tensor only
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from core.conductivity import AnisoTensor, from_upper, metric_of, tangent_basis, tangential_submatrix, to_upper
from core.errors import StrataInversionError
from core.geometry import StrataRegion
from core.mesher import Mesh
from core.ndmap import FluxBasis, NDMatrix, build_nd
from core.optimize import GaussNewton, GaussNewtonResult
from models.specs import InversionOptions
from observability.tracing import span

logger = structlog.get_logger(__name__)

CONSISTENCY_TOL = 1e-8


class InsufficientNormals(StrataInversionError):
    """Raised when the tangent planes do not determine all six metric entries."""
    pass


class NotConsistent(StrataInversionError):
    """Raised when tangential samples do not come from one constant metric."""
    pass


class NotSPD(StrataInversionError):
    """Raised when the recovered metric is not positive definite."""
    pass


class LineSearchFailed(StrataInversionError):
    """Raised when no Gauss-Newton step decreases the misfit."""
    pass


class NotIdentifiable(StrataInversionError):
    """Raised when the misfit Jacobian is rank deficient."""
    pass


class HitEllipticityBound(StrataInversionError):
    """Raised when a fitted tensor ends on the ellipticity bound."""
    pass


@dataclass(frozen=True)
class TangentialSample:
    """
    Attributes:
        point: (3,) surface point
        normal: (3,) unit normal
        submatrix: (2, 2) g restricted to the Householder tangent basis of normal
    """

    point: np.ndarray
    normal: np.ndarray
    submatrix: np.ndarray

    def __post_init__(self) -> None:
        if abs(float(np.linalg.norm(self.normal)) - 1.0) > 1e-10:
            raise ValueError("sample normal must have unit length")
        if not np.allclose(self.submatrix, np.asarray(self.submatrix).T, rtol=0.0, atol=1e-12):
            raise ValueError("tangential submatrix must be symmetric")


def sample_tangential(
    sigma: AnisoTensor, normals: Sequence[np.ndarray], points: Optional[Sequence[np.ndarray]] = None
) -> List[TangentialSample]:
    g = metric_of(sigma)
    samples = []
    for i, normal in enumerate(normals):
        normal = np.asarray(normal, dtype=float)
        sub, _ = tangential_submatrix(g, normal)
        point = np.zeros(3) if points is None else np.asarray(points[i], dtype=float)
        samples.append(TangentialSample(point=point, normal=normal, submatrix=sub))
    return samples


def _constraint_rows(basis: np.ndarray) -> np.ndarray:
    """Rows mapping the 6 upper entries of g to (G11, G12, G22)."""
    rows = []
    for a, b in ((0, 0), (0, 1), (1, 1)):
        ta, tb = basis[a], basis[b]
        outer = np.outer(ta, tb)
        sym = outer + outer.T
        rows.append(to_upper(sym) * np.array([0.5, 1.0, 1.0, 0.5, 1.0, 0.5]))
    return np.array(rows)


def recover_tensor_from_tangential(samples: Sequence[TangentialSample]) -> Tuple[np.ndarray, AnisoTensor]:
    """
    Recover g and sigma from tangential restrictions of g.

    Every tangent plane gives three linear equations in the six entries of g.
    For n = 3, g = det(sigma) sigma^{-1} and det g = det(sigma)^2, hence
    sigma = sqrt(det g) g^{-1}.

    Raises:
        InsufficientNormals: Stacked system has rank < 6
        NotConsistent: Least-squares residual > 1e-8 |data|
        NotSPD: Recovered g is not positive definite
    """
    if not samples:
        raise InsufficientNormals("no tangential samples")
    system = np.vstack([_constraint_rows(tangent_basis(s.normal)) for s in samples])
    data = np.concatenate([np.asarray(s.submatrix)[(0, 0, 1), (0, 1, 1)] for s in samples])

    rank = int(np.linalg.matrix_rank(system, tol=1e-10))
    if rank < 6:
        raise InsufficientNormals(f"tangent planes determine only {rank} of 6 metric entries")

    entries, *_ = np.linalg.lstsq(system, data, rcond=None)
    residual = float(np.linalg.norm(system @ entries - data))
    if residual > CONSISTENCY_TOL * float(np.linalg.norm(data)):
        raise NotConsistent(f"residual {residual:.3e} exceeds {CONSISTENCY_TOL:.0e} |data|")

    g = from_upper(entries)
    if np.linalg.eigvalsh(g)[0] <= 0.0:
        raise NotSPD("recovered metric is not positive definite")
    sigma = np.sqrt(np.linalg.det(g)) * np.linalg.inv(g)
    logger.debug("tensor_recovered_from_tangent_planes", samples=len(samples), residual=residual)
    return g, AnisoTensor.from_matrix(sigma)


def spd_project(entries: np.ndarray, ellipticity: float) -> np.ndarray:
    """Upper-triangle entries with eigenvalues clamped into [1/lambda, lambda]."""
    matrix = from_upper(entries)
    eig, vec = np.linalg.eigh(matrix)
    eig = np.clip(eig, 1.0 / ellipticity, ellipticity)
    return to_upper((vec * eig) @ vec.T)


def on_ellipticity_bound(entries: np.ndarray, ellipticity: float, rtol: float = 1e-9) -> bool:
    eig = np.linalg.eigvalsh(from_upper(entries))
    lo, hi = 1.0 / ellipticity, ellipticity
    return bool(eig[0] <= lo * (1 + rtol) or eig[-1] >= hi * (1 - rtol))


def nd_residual(values: np.ndarray, measured: NDMatrix) -> np.ndarray:
    """(N - N_meas) / |N_meas|_F, flattened; its squared norm is the relative misfit."""
    return ((values - measured.values) / np.linalg.norm(measured.values)).ravel()


def fit_homogeneous(
    nd_measured: NDMatrix,
    mesh: Mesh,
    basis: FluxBasis,
    options: Optional[InversionOptions] = None,
    threads: int = 1,
) -> Tuple[AnisoTensor, GaussNewtonResult]:
    """
    Fit one constant SPD tensor filling the whole mesh to N-D data.

    Raises:
        NotIdentifiable: Jacobian rank < 6 at the starting point
        LineSearchFailed: No step decreased the misfit
        HitEllipticityBound: Fitted tensor sits on the eigenvalue clamp
    """
    options = options or InversionOptions()
    lam = options.ellipticity

    def nd_of(entries: np.ndarray) -> np.ndarray:
        tensors = np.broadcast_to(from_upper(entries), (mesh.n_tets, 3, 3))
        return build_nd(mesh, np.ascontiguousarray(tensors), basis, threads=threads, check=False).values

    # N(c I) = N(I) / c, so the best isotropic start is a one-parameter fit
    unit = nd_of(to_upper(np.eye(3)))
    alpha = float(np.sum(unit * nd_measured.values) / np.sum(unit * unit))
    scale = float(np.clip(1.0 / alpha, 1.0 / lam, lam)) if alpha > 0 else 1.0
    start = to_upper(scale * np.eye(3))

    gn = GaussNewton(
        residual_fn=lambda p: nd_residual(nd_of(p), nd_measured),
        fd_steps=np.full(6, options.tensor_fd_step * scale),
        scheme=options.jacobian_scheme,
        lm_damping=options.lm_damping,
        max_iterations=options.max_iterations,
        misfit_tolerance=options.misfit_tolerance,
        step_tolerance=options.step_tolerance,
        max_backtracks=options.max_backtracks,
        project=lambda p: spd_project(p, lam),
        threads=threads,
        stage="top",
    )

    with span("fit_top_tensor", patterns=basis.size):
        jac = gn.jacobian(start)
        singular = np.linalg.svd(jac, compute_uv=False)
        rank = int(np.sum(singular > 1e-8 * singular.max())) if singular.size and singular.max() > 0 else 0
        if rank < 6:
            raise NotIdentifiable(f"misfit Jacobian has rank {rank} < 6 for {basis.size} flux patterns")
        result = gn.run(start)

    if result.reason == "line_search_failed":
        raise LineSearchFailed(f"no decreasing step from misfit {result.misfit:.3e}")
    if on_ellipticity_bound(result.params, lam):
        raise HitEllipticityBound(f"fitted tensor reached the ellipticity bound lambda={lam}")

    tensor = AnisoTensor.from_entries(result.params)
    logger.info(
        "top_tensor_fitted",
        misfit=result.misfit,
        iterations=result.iterations,
        reason=result.reason,
    )
    return tensor, result


def fit_top_tensor(
    nd_measured: NDMatrix,
    mesh: Mesh,
    region: StrataRegion,
    basis: FluxBasis,
    options: Optional[InversionOptions] = None,
    threads: int = 1,
) -> AnisoTensor:
    """
    Best single SPD tensor for the measured N-D matrix on a fixed mesh.

    On layered data this recovers the top stratum up to a depth-leakage bias
    that the joint refinement of strip_layers removes.
    """
    if mesh.layer_count != region.layer_count:
        logger.warning("mesh_region_layer_mismatch", mesh_layers=mesh.layer_count, region_layers=region.layer_count)
    tensor, _ = fit_homogeneous(nd_measured, mesh, basis, options, threads)
    return tensor
