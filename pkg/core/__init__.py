"""Numerical core for imaging nested anisotropic strata.

Flat Structure:
    - geometry.py: Interfaces, StrataRegion, ordering checks, non-flatness certificates
    - mesher.py: Prism-extrusion tetrahedral meshes with stratum and facet tags
    - conductivity.py: AnisoTensor, StrataModel, metric and tangential blocks
    - diffeo.py: Closed-form diffeomorphisms and the push-forward
    - forward.py: P1 Neumann solver, energies, traces and the kernel probe
    - ndmap.py: Flux bases, N-D matrices and their identities
    - optimize.py: Damped Gauss-Newton on finite-difference Jacobians
    - identify.py: Tangent-plane tensor recovery and the top-tensor fit
    - stripping.py: Layer stripping and the identifiability verdict
    - asymptotics.py: Tangential asymptotics of the Neumann kernel

Usage:
    from core import build_strata_region, mesh_region, StrataModel, build_flux_basis, build_nd

    region = build_strata_region(spec.region)
    mesh = mesh_region(region, h=0.2)
    model = StrataModel.from_spec(region, spec.model)
    basis = build_flux_basis(mesh, region.sigma_patch_radius)
    nd = build_nd(mesh, model, basis)
"""

from core.asymptotics import kernel_asymptotics_demo
from core.conductivity import (
    AnisoTensor,
    StrataModel,
    metric_of,
    tangential_submatrix,
)
from core.diffeo import Diffeo, diffeo_from_spec, pushforward, pushed_field
from core.errors import (
    StrataConfigError,
    StrataError,
    StrataInversionError,
    StrataSolverError,
    StrataValidationError,
)
from core.forward import (
    BoundaryFlux,
    StiffnessSystem,
    assemble,
    boundary_trace,
    energy,
    neumann_kernel_probe,
    solve_neumann,
)
from core.geometry import Interface, StrataRegion, build_strata_region, non_flatness_certificate
from core.identify import TangentialSample, fit_top_tensor, recover_tensor_from_tangential
from core.mesher import FacetTag, Mesh, check_mesh, mesh_region
from core.ndmap import (
    FluxBasis,
    NDMatrix,
    alessandrini_gap,
    build_flux_basis,
    build_nd,
    distinguishability,
    gauge_counterexample_gap,
    restrict_to_patch,
)
from core.stripping import identifiability_verdict, strip_layers

__all__ = [
    "AnisoTensor",
    "BoundaryFlux",
    "Diffeo",
    "FacetTag",
    "FluxBasis",
    "Interface",
    "Mesh",
    "NDMatrix",
    "StiffnessSystem",
    "StrataConfigError",
    "StrataError",
    "StrataInversionError",
    "StrataModel",
    "StrataRegion",
    "StrataSolverError",
    "StrataValidationError",
    "TangentialSample",
    "alessandrini_gap",
    "assemble",
    "boundary_trace",
    "build_flux_basis",
    "build_nd",
    "build_strata_region",
    "check_mesh",
    "diffeo_from_spec",
    "distinguishability",
    "energy",
    "fit_top_tensor",
    "gauge_counterexample_gap",
    "identifiability_verdict",
    "kernel_asymptotics_demo",
    "mesh_region",
    "metric_of",
    "neumann_kernel_probe",
    "non_flatness_certificate",
    "pushed_field",
    "pushforward",
    "recover_tensor_from_tangential",
    "restrict_to_patch",
    "solve_neumann",
    "strip_layers",
    "tangential_submatrix",
]
