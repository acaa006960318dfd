"""invert: layer stripping from a measured or synthesized N-D matrix."""

from typing import Optional, Tuple

import numpy as np
import structlog

from cli.factory import model_from, region_from, template_from
from core.conductivity import StrataModel
from core.errors import StrataConfigError
from core.mesher import mesh_region
from core.ndmap import NDMatrix, build_flux_basis, build_nd, distinguishability
from core.stripping import DEFAULT_SUBLAYERS, StripResult, identifiability_verdict, strip_layers
from models.reports import TruthComparison
from models.specs import ExperimentSpec
from services.artifacts import ArtifactWriter
from services.matrix_io import read_nd_csv

logger = structlog.get_logger(__name__)


def synthesize(model: StrataModel, spec: ExperimentSpec, threads: int) -> NDMatrix:
    """N-D data of a model on the mesh layout the inversion uses."""
    sublayers = spec.mesh.sublayers_per_stratum or DEFAULT_SUBLAYERS
    mesh = mesh_region(model.region, spec.mesh.h, sublayers=sublayers)
    basis = build_flux_basis(mesh, model.region.sigma_patch_radius, spec.basis.rings, spec.basis.base_sectors)
    return build_nd(mesh, model, basis, threads=threads)


def compare_with_truth(result: StripResult, truth: StrataModel) -> TruthComparison:
    """Relative tensor errors and interface coefficient errors in units of the cap height."""
    matches = result.layer_count == truth.region.interface_count
    if not matches:
        return TruthComparison(layer_count_matches=False)
    tensor_errors = [
        got.frobenius_distance(want) / float(np.linalg.norm(want.matrix))
        for got, want in zip(result.tensors, truth.tensors)
    ]
    cap = truth.region.cap_height
    interface_errors = []
    for got, want in zip(result.interfaces, truth.region.interfaces):
        got_modes = {(p, q): a for p, q, a in got.modes}
        want_modes = {(p, q): a for p, q, a in want.modes}
        gaps = [abs(got.offset - want.offset)]
        gaps += [abs(got_modes.get(m, 0.0) - want_modes.get(m, 0.0)) for m in set(got_modes) | set(want_modes)]
        interface_errors.append(max(gaps) / cap)
    return TruthComparison(
        layer_count_matches=True,
        tensor_relative_errors=tensor_errors,
        interface_coefficient_errors=interface_errors,
    )


def measured_data(spec: ExperimentSpec, threads: int) -> Tuple[NDMatrix, Optional[StrataModel]]:
    if spec.data_csv is not None:
        return read_nd_csv(spec.data_csv), None
    if spec.model is None:
        raise StrataConfigError("invert needs a 'model' section or 'data_csv'")
    truth = model_from(region_from(spec.region), spec.model)
    return synthesize(truth, spec, threads), truth


def run(spec: ExperimentSpec, writer: ArtifactWriter, seed: Optional[int], threads: int) -> None:
    template = template_from(spec.region)
    nd_measured, truth = measured_data(spec, threads)
    writer.write_matrix("nd_measured.csv", nd_measured)

    result = strip_layers(nd_measured, template, spec.mesh, spec.basis, spec.inversion, threads=threads)
    updates: dict = {}
    if truth is not None:
        updates["truth"] = compare_with_truth(result, truth)

    if spec.contrast_model is not None:
        contrast_region = region_from(spec.contrast_region or spec.region)
        contrast = model_from(contrast_region, spec.contrast_model)
        nd_contrast = synthesize(contrast, spec, threads)
        contrast_result = strip_layers(nd_contrast, template, spec.mesh, spec.basis, spec.inversion, threads=threads)
        updates["contrast_verdict"] = identifiability_verdict(result.report, contrast_result.report)
        updates["contrast_data_gap"] = distinguishability(nd_measured, nd_contrast)

    report = result.report.model_copy(update=updates)
    writer.write_report("inversion.json", report)
    if result.model is not None:
        sublayers = spec.mesh.sublayers_per_stratum or DEFAULT_SUBLAYERS
        mesh = mesh_region(result.model.region, spec.mesh.h, sublayers=sublayers, check_resolution=False)
        writer.write_mesh("model.vtk", mesh)
    logger.info(
        "invert_experiment_finished",
        layers=result.layer_count,
        final_misfit=report.final_misfit,
        stopping_reason=report.stopping_reason,
        contrast_verdict=report.contrast_verdict,
    )
