"""
Artifact writing for experiment runs.

ArtifactWriter owns an output directory: it writes JSON reports (sorted keys,
validated against the report model's JSON schema), N-D CSVs and VTK files,
remembers every path and finally writes manifest.json with a SHA-256 per
artifact.
"""

import hashlib
import json
from pathlib import Path
from typing import Dict, List, Optional

import jsonschema
import numpy as np
import structlog
from pydantic import BaseModel

from core.mesher import Mesh
from core.ndmap import NDMatrix
from models.reports import Manifest, ManifestEntry
from observability.metrics import render_metrics
from services.matrix_io import write_nd_csv
from services.vtk_export import write_mesh_vtk

logger = structlog.get_logger(__name__)

MANIFEST_NAME = "manifest.json"


def sha256_of(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def dump_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


class ArtifactWriter:
    """
    Writes artifacts of one experiment run below out_dir.

    Attributes:
        out_dir: Output directory (created on demand)
        written: Relative paths of every artifact, in write order
    """

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[str] = []

    def _record(self, path: Path) -> Path:
        rel = path.relative_to(self.out_dir).as_posix()
        if rel not in self.written:
            self.written.append(rel)
        return path

    def write_report(self, name: str, report: BaseModel) -> Path:
        """
        Raises:
            jsonschema.ValidationError: Report does not match its model's schema
        """
        payload = report.model_dump(mode="json")
        jsonschema.validate(instance=payload, schema=type(report).model_json_schema())
        path = self.out_dir / name
        path.write_text(dump_json(payload))
        logger.debug("report_written", path=str(path))
        return self._record(path)

    def write_matrix(self, name: str, nd: NDMatrix) -> Path:
        return self._record(write_nd_csv(self.out_dir / name, nd))

    def write_mesh(self, name: str, mesh: Mesh, point_fields: Optional[Dict[str, np.ndarray]] = None) -> Path:
        return self._record(write_mesh_vtk(self.out_dir / name, mesh, point_fields))

    def write_metrics(self, name: str = "metrics.prom") -> Path:
        """Prometheus text dump; not listed in the manifest."""
        path = self.out_dir / name
        path.write_bytes(render_metrics())
        return path

    def write_manifest(self, command: str, seed: Optional[int]) -> Path:
        entries = [
            ManifestEntry(path=rel, sha256=sha256_of(self.out_dir / rel), bytes=(self.out_dir / rel).stat().st_size)
            for rel in sorted(self.written)
        ]
        manifest = Manifest(command=command, seed=seed, artifacts=entries)
        path = self.out_dir / MANIFEST_NAME
        path.write_text(dump_json(manifest.model_dump(mode="json")))
        logger.info("manifest_written", path=str(path), artifacts=len(entries))
        return path
