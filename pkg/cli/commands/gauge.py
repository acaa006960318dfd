"""gauge: N-D gap between a model and its boundary-fixing re-gauge under refinement."""

from typing import List, Optional, Tuple

import numpy as np
import structlog

from cli.factory import basis_from, model_from, region_from
from core.conductivity import StrataModel
from core.diffeo import Diffeo, diffeo_from_spec
from core.mesher import mesh_region
from core.ndmap import converges_under_refinement, gauge_counterexample_gap, stabilizes_under_refinement
from core.settings import get_settings
from models.reports import GaugeReport, GaugeRow
from models.specs import ExperimentSpec
from services.artifacts import ArtifactWriter

logger = structlog.get_logger(__name__)

RATIO_LIMIT = 0.7
# Gaps below this multiple of the solver tolerance are treated as noise.
FLOOR_FACTOR = 1e3


def refinement_rows(
    model: StrataModel, psi: Diffeo, spec: ExperimentSpec, threads: int
) -> Tuple[List[GaugeRow], List[float]]:
    """Gap per resolution (coarse to fine) and the ratios of consecutive gaps."""
    sublayers = spec.mesh.sublayers_per_stratum if spec.mesh is not None else None
    rows = []
    for h in sorted(spec.resolutions or [], reverse=True):
        mesh = mesh_region(model.region, h, sublayers=sublayers)
        basis = basis_from(mesh, model.region, spec.basis)
        gap = gauge_counterexample_gap(mesh, model, psi, basis, threads=threads)
        rows.append(GaugeRow(h=h, tets=mesh.n_tets, gap=gap))
    tiny = np.finfo(float).tiny
    ratios = [b.gap / max(a.gap, tiny) for a, b in zip(rows[:-1], rows[1:])]
    return rows, ratios


def run(spec: ExperimentSpec, writer: ArtifactWriter, seed: Optional[int], threads: int) -> None:
    region = region_from(spec.region)
    model = model_from(region, spec.model)
    psi = diffeo_from_spec(spec.diffeo)
    floor = FLOOR_FACTOR * get_settings().cg_rtol

    rows, ratios = refinement_rows(model, psi, spec, threads)
    flat_converges = converges_under_refinement([r.gap for r in rows], ratios, RATIO_LIMIT, floor)

    contrast_rows: List[GaugeRow] = []
    contrast_ratios: List[float] = []
    contrast_stabilizes = None
    if spec.contrast_region is not None:
        contrast_region = region_from(spec.contrast_region)
        contrast_model = model_from(contrast_region, spec.contrast_model or spec.model)
        contrast_rows, contrast_ratios = refinement_rows(contrast_model, psi, spec, threads)
        contrast_stabilizes = stabilizes_under_refinement(
            [r.gap for r in contrast_rows], contrast_ratios, RATIO_LIMIT, floor
        )

    passed = flat_converges and contrast_stabilizes is not False
    report = GaugeReport(
        diffeo=psi.name,
        rows=rows,
        ratios=ratios,
        contrast_rows=contrast_rows,
        contrast_ratios=contrast_ratios,
        ratio_limit=RATIO_LIMIT,
        contrast_floor=floor,
        flat_converges=flat_converges,
        contrast_stabilizes=contrast_stabilizes,
        passed=passed,
    )
    writer.write_report("gauge.json", report)
    if not passed:
        logger.warning(
            "gauge_verdict_failed",
            flat_converges=flat_converges,
            contrast_stabilizes=contrast_stabilizes,
            ratios=ratios,
            contrast_ratios=contrast_ratios,
        )
    logger.info(
        "gauge_experiment_finished", diffeo=psi.name, gaps=[r.gap for r in rows], ratios=ratios, passed=passed
    )
