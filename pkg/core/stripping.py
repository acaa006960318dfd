"""
Layer stripping with Gauss-Newton refinement.

Starting from the best homogeneous tensor, stage k adds interface k under the
already committed strata and fits (sigma_k, interface k, sigma_{k+1}) with
everything above frozen. A stage is kept only if it lowers the misfit by the
factor rho_accept and produces a visible jump |sigma_{k+1} - sigma_k|_F >=
delta_jump; otherwise the interface is merged away and stripping stops. A final
joint refinement fits every remaining parameter.

All iterates are remeshed with a fixed sublayer count per stratum, so models
with the same number of interfaces share one mesh topology.

Classes:
    - InversionState: committed strata and the working model
    - StageRecord: outcome of one stripping stage
    - StripResult: recovered K, tensors, interfaces, model and report
    - LayerStripper: the stripping driver

Functions:
    - strip_layers: Convenience wrapper around LayerStripper
    - identifiability_verdict: Compare two inversion reports
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from core.conductivity import AnisoTensor, StrataModel
from core.errors import StrataInversionError, StrataValidationError
from core.geometry import FlatInterface, Interface, StrataRegion, non_flatness_certificate, validate_region
from core.identify import fit_homogeneous, nd_residual, on_ellipticity_bound, spd_project
from core.mesher import Mesh, mesh_region
from core.ndmap import FluxBasis, NDMatrix, build_flux_basis, build_nd
from core.optimize import GaussNewton, GaussNewtonResult, JacobianUnavailable, misfit_of
from models.reports import InversionReport, StageReport, TensorReport, SurfaceReport
from models.specs import BasisSpec, InterfaceSpec, InversionOptions, MeshSpec
from observability.tracing import span

logger = structlog.get_logger(__name__)

DEFAULT_SUBLAYERS = 2


class MeshingFailed(StrataInversionError):
    """Raised when the starting model of a stage cannot be meshed."""
    pass


class MaxIterations(StrataInversionError):
    """Raised when Gauss-Newton hits its iteration cap in strict mode."""
    pass


@dataclass(frozen=True)
class InversionState:
    """
    Committed strata above the current interface plus the working model.

    Attributes:
        k: Index of the interface being stripped next
        frozen_interfaces: phi_1 .. phi_{k-1}, never modified after commit
        frozen_tensors: sigma_1 .. sigma_{k-1}, never modified after commit
        working_tensor: Current estimate of the half-space below the frozen strata
        misfit: Misfit of the committed model
        misfit_history: Misfits of committed models, non-increasing
    """

    k: int
    frozen_interfaces: Tuple[Interface, ...]
    frozen_tensors: Tuple[AnisoTensor, ...]
    working_tensor: AnisoTensor
    misfit: float
    misfit_history: Tuple[float, ...] = ()

    def commit(self, interface: Interface, upper: AnisoTensor, lower: AnisoTensor, misfit: float) -> "InversionState":
        return InversionState(
            k=self.k + 1,
            frozen_interfaces=self.frozen_interfaces + (interface,),
            frozen_tensors=self.frozen_tensors + (upper,),
            working_tensor=lower,
            misfit=misfit,
            misfit_history=self.misfit_history + (misfit,),
        )


@dataclass
class StageRecord:
    stage: int
    accepted: bool
    misfit_before: float
    misfit_after: float
    jump: float
    reason: str
    iterations: int
    history: List[float] = field(default_factory=list)
    interfaces: List[Interface] = field(default_factory=list)
    tensors: List[AnisoTensor] = field(default_factory=list)


@dataclass
class StripResult:
    layer_count: int
    tensors: List[AnisoTensor]
    interfaces: List[Interface]
    model: Optional[StrataModel]
    report: InversionReport
    stages: List[StageRecord]


class _Parameterization:
    """
    Maps a flat parameter vector onto the free part of a layered model.

    Free blocks are listed as ("tensor", index) with 6 entries and
    ("interface", index) with 1 + n_modes entries (offset then amplitudes).
    """

    def __init__(self, blocks: Sequence[Tuple[str, int]], modes: Sequence[Tuple[int, int]]) -> None:
        self.blocks = list(blocks)
        self.modes = list(modes)

    def size_of(self, kind: str) -> int:
        return 6 if kind == "tensor" else 1 + len(self.modes)

    @property
    def size(self) -> int:
        return sum(self.size_of(kind) for kind, _ in self.blocks)

    def pack(self, interfaces: Sequence[Interface], tensors: Sequence[AnisoTensor]) -> np.ndarray:
        parts = []
        for kind, index in self.blocks:
            if kind == "tensor":
                parts.append(tensors[index].vector)
            else:
                iface = interfaces[index]
                parts.append(np.concatenate([[iface.offset], iface.amplitudes]))
        return np.concatenate(parts)

    def unpack(
        self, params: np.ndarray, interfaces: Sequence[Interface], tensors: Sequence[AnisoTensor]
    ) -> Tuple[List[Interface], List[AnisoTensor]]:
        interfaces = list(interfaces)
        tensors = list(tensors)
        pos = 0
        for kind, index in self.blocks:
            width = self.size_of(kind)
            chunk = params[pos : pos + width]
            if kind == "tensor":
                tensors[index] = AnisoTensor.from_entries(chunk)
            else:
                interfaces[index] = interfaces[index].with_coefficients(chunk[0], chunk[1:])
            pos += width
        return interfaces, tensors

    def fd_steps(self, tensor_step: float, tensor_scale: float, interface_step: float) -> np.ndarray:
        steps = []
        for kind, _ in self.blocks:
            if kind == "tensor":
                steps.extend([tensor_step * tensor_scale] * 6)
            else:
                steps.extend([interface_step] * self.size_of(kind))
        return np.array(steps)

    def projector(self, ellipticity: float):
        def project(params: np.ndarray) -> np.ndarray:
            out = params.copy()
            pos = 0
            for kind, _ in self.blocks:
                width = self.size_of(kind)
                if kind == "tensor":
                    out[pos : pos + 6] = spd_project(out[pos : pos + 6], ellipticity)
                pos += width
            return out

        return project


class LayerStripper:
    """
    Layer-stripping driver for one measured N-D matrix.

    Args:
        nd_measured: Measured local N-D matrix
        template: Region supplying footprint, cap, top surface, patch and min gap;
            its interfaces are ignored
        mesh_spec: Edge length and sublayers per stratum
        basis_spec: Facet-group layout of the flux basis (must match the data)
        options: Stripping and Gauss-Newton controls
        threads: Concurrent FD columns and solves
    """

    def __init__(
        self,
        nd_measured: NDMatrix,
        template: StrataRegion,
        mesh_spec: MeshSpec,
        basis_spec: BasisSpec,
        options: InversionOptions,
        threads: int = 1,
    ) -> None:
        self.nd_measured = nd_measured
        self.template = template
        self.h = mesh_spec.h
        self.sublayers = mesh_spec.sublayers_per_stratum or DEFAULT_SUBLAYERS
        self.basis_spec = basis_spec
        self.options = options
        self.threads = threads
        self.tensor_scale = 1.0

    def region_for(self, interfaces: Sequence[Interface]) -> StrataRegion:
        return self.template.with_interfaces(interfaces)

    def _mesh_and_basis(self, region: StrataRegion) -> Tuple[Mesh, FluxBasis]:
        mesh = mesh_region(region, self.h, sublayers=self.sublayers, check_resolution=False)
        basis = build_flux_basis(
            mesh, region.sigma_patch_radius, self.basis_spec.rings, self.basis_spec.base_sectors
        )
        return mesh, basis

    def residual(self, interfaces: Sequence[Interface], tensors: Sequence[AnisoTensor]) -> Optional[np.ndarray]:
        """Relative N-D residual of a layered model, or None if it is infeasible."""
        try:
            region = validate_region(self.region_for(interfaces))
            mesh, basis = self._mesh_and_basis(region)
        except StrataValidationError:
            return None
        if basis.basis_id != self.nd_measured.basis_id:
            return None
        stack = np.stack([t.matrix for t in tensors])
        conductivity = stack[mesh.region_tags - 1]
        values = build_nd(mesh, conductivity, basis, threads=self.threads, check=False).values
        return nd_residual(values, self.nd_measured)

    def _optimize(
        self,
        param: _Parameterization,
        interfaces: Sequence[Interface],
        tensors: Sequence[AnisoTensor],
        stage: str,
        index: Optional[int] = None,
    ) -> Tuple[List[Interface], List[AnisoTensor], GaussNewtonResult]:
        opts = self.options
        name = stage if index is None else f"{stage} {index}"

        def residual_fn(params: np.ndarray) -> Optional[np.ndarray]:
            ifs, ts = param.unpack(params, interfaces, tensors)
            return self.residual(ifs, ts)

        gn = GaussNewton(
            residual_fn=residual_fn,
            fd_steps=param.fd_steps(opts.tensor_fd_step, self.tensor_scale, opts.interface_fd_step * self.template.cap_height),
            scheme=opts.jacobian_scheme,
            lm_damping=opts.lm_damping,
            max_iterations=opts.max_iterations,
            misfit_tolerance=opts.misfit_tolerance,
            step_tolerance=opts.step_tolerance,
            max_backtracks=opts.max_backtracks,
            project=param.projector(opts.ellipticity),
            threads=self.threads,
            stage=stage,
        )
        start = param.pack(interfaces, tensors)
        try:
            result = gn.run(start)
        except JacobianUnavailable as exc:
            raise MeshingFailed(f"{name}: {exc}") from exc
        if result.reason == "max_iterations" and opts.strict_iterations:
            raise MaxIterations(f"{name}: no convergence in {opts.max_iterations} iterations")
        ifs, ts = param.unpack(result.params, interfaces, tensors)
        return ifs, ts, result

    def _initial_interface(self, previous: Interface) -> Interface:
        frac = self.options.initial_depth_fraction
        offset = previous.offset + (self.template.cap_height - previous.offset) * frac
        modes = tuple((int(p), int(q), 0.0) for p, q in self.options.interface_modes)
        return Interface(offset=offset, modes=modes, radius=self.template.radius)

    def _stage(self, state: InversionState) -> StageRecord:
        k = state.k
        previous = state.frozen_interfaces[-1] if state.frozen_interfaces else self.template.top_surface
        new_iface = self._initial_interface(previous)
        interfaces = list(state.frozen_interfaces) + [new_iface]
        upper = state.working_tensor

        best = None
        for factor in self.options.deeper_init_scales:
            lower = AnisoTensor.from_entries(spd_project(factor * upper.vector, self.options.ellipticity))
            tensors = list(state.frozen_tensors) + [upper, lower]
            trial = misfit_of(self.residual(interfaces, tensors))
            if best is None or trial < best[0]:
                best = (trial, tensors)
        if best is None or not np.isfinite(best[0]):
            raise MeshingFailed(f"stage {k}: the initial interface at offset {new_iface.offset:.4f} cannot be meshed")
        tensors = best[1]

        param = _Parameterization(
            [("tensor", k - 1), ("interface", k - 1), ("tensor", k)], self.options.interface_modes
        )
        with span("strip_stage", stage=k):
            interfaces, tensors, result = self._optimize(param, interfaces, tensors, stage="strip", index=k)

        jump = tensors[k - 1].frobenius_distance(tensors[k])
        ratio = state.misfit / max(result.misfit, self.options.misfit_floor)
        accepted = ratio >= self.options.rho_accept and jump >= self.options.merge_jump
        if accepted:
            reason = "accepted"
        elif jump < self.options.merge_jump:
            reason = "jump_below_delta"
        else:
            reason = "misfit_drop_below_rho"
        logger.info(
            "strip_stage_finished",
            stage=k,
            accepted=accepted,
            misfit_before=state.misfit,
            misfit_after=result.misfit,
            jump=jump,
            gauss_newton_reason=result.reason,
        )
        return StageRecord(
            stage=k,
            accepted=accepted,
            misfit_before=state.misfit,
            misfit_after=result.misfit,
            jump=jump,
            reason=reason,
            iterations=result.iterations,
            history=list(result.history),
            interfaces=interfaces,
            tensors=tensors,
        )

    def run(self) -> StripResult:
        opts = self.options
        top_region = self.region_for([self._initial_interface(self.template.top_surface)])
        top_mesh, top_basis = self._mesh_and_basis(validate_region(top_region))
        if top_basis.basis_id != self.nd_measured.basis_id:
            raise StrataInversionError("flux basis of the inversion does not match the measured N-D matrix")

        with span("strip_top_tensor"):
            top, top_fit = fit_homogeneous(self.nd_measured, top_mesh, top_basis, opts, self.threads)
        self.tensor_scale = float(np.mean(top.eigenvalues()))

        state = InversionState(
            k=1,
            frozen_interfaces=(),
            frozen_tensors=(),
            working_tensor=top,
            misfit=top_fit.misfit,
            misfit_history=(top_fit.misfit,),
        )
        stages: List[StageRecord] = []
        stopping = "k_max_reached"
        accepted_record: Optional[StageRecord] = None

        while state.k <= opts.k_max:
            if state.misfit <= opts.misfit_floor * opts.rho_accept:
                stopping = f"misfit_at_noise_floor_before_stage_{state.k}"
                stages.append(
                    StageRecord(
                        stage=state.k,
                        accepted=False,
                        misfit_before=state.misfit,
                        misfit_after=state.misfit,
                        jump=0.0,
                        reason="misfit_at_noise_floor",
                        iterations=0,
                    )
                )
                break
            record = self._stage(state)
            stages.append(record)
            if not record.accepted:
                stopping = f"merged_interface_{state.k}"
                break
            k = state.k
            state = state.commit(record.interfaces[k - 1], record.tensors[k - 1], record.tensors[k], record.misfit_after)
            accepted_record = record

        layer_count = len(state.frozen_interfaces)
        history = list(state.misfit_history)
        refine_reason = "skipped"
        if layer_count == 0:
            interfaces: List[Interface] = []
            tensors = [state.working_tensor]
            final_misfit = state.misfit
            model = None
        else:
            assert accepted_record is not None
            interfaces = list(state.frozen_interfaces)
            tensors = list(state.frozen_tensors) + [state.working_tensor]
            blocks: List[Tuple[str, int]] = []
            for i in range(layer_count):
                blocks += [("tensor", i), ("interface", i)]
            blocks.append(("tensor", layer_count))
            param = _Parameterization(blocks, opts.interface_modes)
            with span("strip_joint_refinement", layers=layer_count):
                interfaces, tensors, joint = self._optimize(param, interfaces, tensors, stage="joint")
            history.extend(joint.history[1:])
            final_misfit = joint.misfit
            refine_reason = joint.reason
            if any(on_ellipticity_bound(t.vector, opts.ellipticity) for t in tensors):
                logger.warning("fitted_tensor_on_ellipticity_bound")
            region = self.region_for(interfaces)
            model = StrataModel(
                region=region,
                tensors=tuple(tensors),
                ellipticity=opts.ellipticity,
                jump_tolerance=opts.merge_jump,
            )

        report = build_report(
            layer_count, tensors, interfaces, self.template, history, stages, stopping, refine_reason, final_misfit
        )
        logger.info("layers_stripped", layers=layer_count, misfit=final_misfit, stopping_reason=stopping)
        return StripResult(
            layer_count=layer_count,
            tensors=tensors,
            interfaces=interfaces,
            model=model,
            report=report,
            stages=stages,
        )


def _flatness(iface: Interface, footprint: str) -> bool:
    try:
        non_flatness_certificate(iface, footprint=footprint)
    except FlatInterface:
        return False
    return True


def build_report(
    layer_count: int,
    tensors: Sequence[AnisoTensor],
    interfaces: Sequence[Interface],
    template: StrataRegion,
    history: Sequence[float],
    stages: Sequence[StageRecord],
    stopping: str,
    refine_reason: str,
    final_misfit: float,
) -> InversionReport:
    surfaces = [template.top_surface] + list(interfaces)
    return InversionReport(
        layer_count=layer_count,
        tensors=[TensorReport(index=i + 1, entries=list(t.entries)) for i, t in enumerate(tensors)],
        interfaces=[InterfaceSpec(offset=i.offset, modes=[(p, q, a) for p, q, a in i.modes]) for i in interfaces],
        surfaces=[
            SurfaceReport(index=i, non_flat_certified=_flatness(s, template.footprint))
            for i, s in enumerate(surfaces)
        ],
        misfit_history=list(history),
        final_misfit=final_misfit,
        stopping_reason=stopping,
        refinement_reason=refine_reason,
        stages=[
            StageReport(
                stage=r.stage,
                accepted=r.accepted,
                misfit_before=r.misfit_before,
                misfit_after=r.misfit_after,
                jump=r.jump,
                reason=r.reason,
                iterations=r.iterations,
            )
            for r in stages
        ],
    )


def strip_layers(
    nd_measured: NDMatrix,
    template: StrataRegion,
    mesh_spec: MeshSpec,
    basis_spec: BasisSpec,
    options: InversionOptions,
    threads: int = 1,
) -> StripResult:
    """
    Reconstruct K, the interfaces and the strata tensors from a local N-D matrix.

    Raises:
        MeshingFailed: A stage's starting model cannot be meshed
        MaxIterations: Iteration cap reached with options.strict_iterations
        NotIdentifiable, LineSearchFailed, HitEllipticityBound: From the top-tensor fit
    """
    return LayerStripper(nd_measured, template, mesh_spec, basis_spec, options, threads).run()


def identifiability_verdict(
    report_a: InversionReport,
    report_b: InversionReport,
    misfit_tolerance: float = 1e-8,
    parameter_tolerance: float = 1e-3,
) -> str:
    """
    IDENTIFIABLE unless both reconstructions explain their data equally well
    (misfits within misfit_tolerance) while their parameters differ.

    Returns:
        "IDENTIFIABLE" or "NON-IDENTIFIABLE"
    """
    equal_fit = abs(report_a.final_misfit - report_b.final_misfit) <= misfit_tolerance
    same_shape = report_a.layer_count == report_b.layer_count
    if not same_shape:
        differ = True
    else:
        ta = np.array([t.entries for t in report_a.tensors])
        tb = np.array([t.entries for t in report_b.tensors])
        tensor_gap = float(np.linalg.norm(ta - tb) / max(np.linalg.norm(ta), np.finfo(float).tiny))
        ia = np.array([[i.offset] + [m[2] for m in i.modes] for i in report_a.interfaces]).ravel()
        ib = np.array([[i.offset] + [m[2] for m in i.modes] for i in report_b.interfaces]).ravel()
        iface_gap = float(np.abs(ia - ib).max()) if ia.size and ia.shape == ib.shape else 0.0
        differ = tensor_gap > parameter_tolerance or iface_gap > parameter_tolerance
    verdict = "NON-IDENTIFIABLE" if equal_fit and differ else "IDENTIFIABLE"
    logger.info("identifiability_verdict", verdict=verdict, equal_fit=equal_fit, parameters_differ=differ)
    return verdict
