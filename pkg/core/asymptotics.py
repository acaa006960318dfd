"""
Tangential asymptotics of the discrete Neumann kernel.

Near the source y on a flat patch, the half-space kernel of a constant tensor is

    N(y + xi) ~ 1 / (2 pi sqrt(xi^T g_t xi))

with g_t the tangential block of metric_of(sigma). The probe field is fitted on
the annulus 2 eps <= |xi| <= 6 eps of top-surface vertices to
c0 + c . xi + (xi^T P xi)^{-1/2}, so P / (4 pi^2) estimates g_t. Diagnostic only.
"""

from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np
import structlog
from scipy.optimize import least_squares

from core.conductivity import AnisoTensor, StrataModel, metric_of, tangential_submatrix
from core.forward import SourceOffPatch, assemble, neumann_kernel_probe
from core.mesher import Mesh

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class AsymptoticsRow:
    """One mollifier radius of the kernel asymptotics table."""

    radius: float
    fitted_form: np.ndarray
    reference_form: np.ndarray
    condition: float
    axis_angle_deg: float
    relative_error: float
    samples: int


def _form_from_params(params: np.ndarray) -> np.ndarray:
    # log-Cholesky: P = L L^T with positive diagonal
    l11, l21, l22 = np.exp(params[3]), params[4], np.exp(params[5])
    lower = np.array([[l11, 0.0], [l21, l22]])
    return lower @ lower.T


def _axis_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle (degrees, in [0, 90]) between the leading eigenvectors of two 2x2 forms."""
    va = np.linalg.eigh(a)[1][:, -1]
    vb = np.linalg.eigh(b)[1][:, -1]
    cos = min(1.0, abs(float(va @ vb)))
    return float(np.degrees(np.arccos(cos)))


def fit_tangential_form(xi: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Least-squares fit of c0 + c . xi + (xi^T P xi)^{-1/2}; returns P."""
    rho = np.linalg.norm(xi, axis=1)
    design = np.column_stack([np.ones_like(rho), 1.0 / rho])
    (c0, amplitude), *_ = np.linalg.lstsq(design, values, rcond=None)
    p0 = 1.0 / amplitude**2 if amplitude > 0 else 4.0 * np.pi**2
    start = np.array([c0, 0.0, 0.0, 0.5 * np.log(p0), 0.0, 0.5 * np.log(p0)])

    def residual(params: np.ndarray) -> np.ndarray:
        form = _form_from_params(params)
        quad = np.einsum("ni,ij,nj->n", xi, form, xi)
        return params[0] + xi @ params[1:3] + 1.0 / np.sqrt(quad) - values

    fit = least_squares(residual, start, method="lm", xtol=1e-14, ftol=1e-14)
    return _form_from_params(fit.x)


def kernel_asymptotics_demo(
    mesh: Mesh,
    model: Union[StrataModel, AnisoTensor],
    y: Sequence[float],
    radii: Sequence[float],
    patch_radius: float,
) -> List[AsymptoticsRow]:
    """
    Fitted tangential forms of the probe field for each mollifier radius.

    The reference is the tangential block of metric_of(sigma_1) in the (e1, e2)
    basis of the top surface.

    Raises:
        SourceOffPatch: A radius leaves the Sigma patch
        ProbeUnderResolved: A radius is below two mesh sizes
    """
    if isinstance(model, AnisoTensor):
        top = model
        conductivity = np.repeat(model.matrix[None], mesh.n_tets, axis=0)
        sys = assemble(mesh, conductivity)
    else:
        top = model.tensors[0]
        sys = assemble(mesh, model)
    reference, _ = tangential_submatrix(metric_of(top), np.array([0.0, 0.0, 1.0]))

    source = np.asarray(y, dtype=float)[:2]
    top_vertices = np.arange(mesh.column_count)
    planar = mesh.vertices[top_vertices, :2] - source
    dist = np.linalg.norm(planar, axis=1)

    rows = []
    for eps in sorted(radii, reverse=True):
        u = neumann_kernel_probe(sys, source, eps, patch_radius)
        ring = (dist >= 2.0 * eps) & (dist <= 6.0 * eps)
        if int(ring.sum()) < 8:
            raise SourceOffPatch(f"only {int(ring.sum())} top-surface vertices in the fitting annulus for eps={eps}")
        form = fit_tangential_form(planar[ring], u[top_vertices[ring]]) / (4.0 * np.pi**2)
        eig = np.linalg.eigvalsh(form)
        row = AsymptoticsRow(
            radius=float(eps),
            fitted_form=form,
            reference_form=reference,
            condition=float(eig[-1] / eig[0]),
            axis_angle_deg=_axis_angle(form, reference),
            relative_error=float(np.linalg.norm(form - reference) / np.linalg.norm(reference)),
            samples=int(ring.sum()),
        )
        logger.info(
            "kernel_asymptotics_row",
            radius=row.radius,
            condition=row.condition,
            axis_angle_deg=row.axis_angle_deg,
            relative_error=row.relative_error,
        )
        rows.append(row)
    return rows
