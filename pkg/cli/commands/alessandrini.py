"""alessandrini: randomized check of the discrete Alessandrini identity."""

from typing import Optional

import numpy as np
import structlog

from cli.factory import basis_from, mesh_from, model_from, region_from
from core.conductivity import StrataModel, random_spd
from core.errors import StrataValidationError
from core.ndmap import alessandrini_gap
from models.reports import AlessandriniReport
from models.specs import ExperimentSpec
from services.artifacts import ArtifactWriter

logger = structlog.get_logger(__name__)

TOLERANCE = 1e-9


def random_model(template: StrataModel, rng: np.random.Generator) -> StrataModel:
    tensors = tuple(random_spd(rng) for _ in range(template.region.layer_count))
    return StrataModel(region=template.region, tensors=tensors, ellipticity=template.ellipticity, jump_tolerance=0.0)


def run(spec: ExperimentSpec, writer: ArtifactWriter, seed: Optional[int], threads: int) -> None:
    if seed is None:
        raise StrataValidationError("alessandrini needs a seed")
    region = region_from(spec.region)
    template = model_from(region, spec.model)
    mesh = mesh_from(region, spec.mesh)
    basis = basis_from(mesh, region, spec.basis)

    rng = np.random.default_rng(seed)
    residuals = []
    for trial in range(spec.trials):
        gap = alessandrini_gap(mesh, random_model(template, rng), random_model(template, rng), basis, threads)
        residuals.append(gap.residual)
        logger.debug("alessandrini_trial", trial=trial, residual=gap.residual)

    worst = max(residuals) if residuals else 0.0
    report = AlessandriniReport(
        trials=spec.trials,
        seed=seed,
        residuals=residuals,
        max_residual=worst,
        tolerance=TOLERANCE,
        passed=worst <= TOLERANCE,
    )
    writer.write_report("alessandrini.json", report)
    logger.info("alessandrini_experiment_finished", trials=spec.trials, max_residual=worst, passed=report.passed)
