"""tangent: randomized recovery of constant tensors from tangential metric data."""

from typing import List, Optional

import numpy as np
import structlog

from core.conductivity import AnisoTensor, random_spd
from core.errors import StrataValidationError
from core.geometry import FlatInterface, build_strata_region, non_flatness_certificate
from core.identify import InsufficientNormals, recover_tensor_from_tangential, sample_tangential
from models.reports import TangentReport
from models.specs import ExperimentSpec
from services.artifacts import ArtifactWriter

logger = structlog.get_logger(__name__)


def random_normals(rng: np.random.Generator, count: int = 3) -> List[np.ndarray]:
    """Unit normals in the upper half space, tilted at most 60 degrees from e3."""
    normals = []
    while len(normals) < count:
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        if v[2] >= 0.5:
            normals.append(v)
    return normals


def rejects(sigma: AnisoTensor, normals: List[np.ndarray]) -> bool:
    try:
        recover_tensor_from_tangential(sample_tangential(sigma, normals))
    except InsufficientNormals:
        return True
    return False


def run(spec: ExperimentSpec, writer: ArtifactWriter, seed: Optional[int], threads: int) -> None:
    if seed is None:
        raise StrataValidationError("tangent needs a seed")
    rng = np.random.default_rng(seed)

    certificate = []
    if spec.region is not None:
        region = build_strata_region(spec.region)
        for iface in region.interfaces:
            try:
                certificate = non_flatness_certificate(iface, footprint=region.footprint)
                break
            except FlatInterface:
                continue

    worst = 0.0
    for trial in range(spec.trials):
        sigma = random_spd(rng)
        normals = [n for _, n in certificate] if certificate else random_normals(rng)
        _, recovered = recover_tensor_from_tangential(sample_tangential(sigma, normals))
        error = recovered.frobenius_distance(sigma) / float(np.linalg.norm(sigma.matrix))
        worst = max(worst, error)
        logger.debug("tangent_trial", trial=trial, relative_error=error)

    probe = random_spd(rng)
    pair = random_normals(rng, 2)
    report = TangentReport(
        trials=spec.trials,
        seed=seed,
        max_relative_error=worst,
        single_normal_rejected=rejects(probe, pair[:1]),
        two_normals_rejected=rejects(probe, pair),
        certificate_points=len(certificate),
    )
    writer.write_report("tangent.json", report)
    logger.info("tangent_experiment_finished", trials=spec.trials, max_relative_error=worst)
