"""
CSV import/export of N-D matrices.

The first line carries the provenance:

    # provenance: mesh_id=<id> model_id=<id> basis_id=<id>

followed by one comma-separated row per matrix row, written with 17
significant digits so a round trip is exact.
"""

from pathlib import Path

import numpy as np
import structlog

from core.errors import StrataConfigError
from core.ndmap import NDMatrix

logger = structlog.get_logger(__name__)

_PREFIX = "provenance:"
_KEYS = ("mesh_id", "model_id", "basis_id")


class MatrixFormatError(StrataConfigError):
    """Raised when an N-D CSV file is missing its provenance or is malformed."""
    pass


def write_nd_csv(path: Path, nd: NDMatrix) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"{_PREFIX} " + " ".join(f"{k}={getattr(nd, k)}" for k in _KEYS)
    np.savetxt(path, nd.values, fmt="%.17g", delimiter=",", header=header, comments="# ")
    logger.debug("nd_csv_written", path=str(path), size=nd.size)
    return path


def read_nd_csv(path: Path) -> NDMatrix:
    """
    Raises:
        MatrixFormatError: Missing file, missing provenance, or non-square data
    """
    path = Path(path)
    if not path.is_file():
        raise MatrixFormatError(f"N-D matrix file not found: {path}")
    with path.open() as handle:
        first = handle.readline().lstrip("#").strip()
    if not first.startswith(_PREFIX):
        raise MatrixFormatError(f"{path}: first line must be '# {_PREFIX} ...'")
    fields = dict(item.split("=", 1) for item in first[len(_PREFIX):].split() if "=" in item)
    missing = [k for k in _KEYS if k not in fields]
    if missing:
        raise MatrixFormatError(f"{path}: provenance lacks {', '.join(missing)}")
    try:
        values = np.atleast_2d(np.loadtxt(path, delimiter=",", comments="#"))
    except ValueError as exc:
        raise MatrixFormatError(f"{path}: {exc}") from exc
    if values.shape[0] != values.shape[1]:
        raise MatrixFormatError(f"{path}: N-D matrix must be square, got {values.shape}")
    return NDMatrix(values=values, mesh_id=fields["mesh_id"], model_id=fields["model_id"], basis_id=fields["basis_id"])
