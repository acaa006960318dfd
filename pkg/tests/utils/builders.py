"""
Shared builders for strata-eit tests.

Provides:
- Small region/model/mesh configurations that solve in well under a second
- Report-file validation against the JSON schema of its pydantic model
- Experiment-config writers for CLI tests
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Type

import jsonschema
from pydantic import BaseModel

from core.conductivity import AnisoTensor, StrataModel
from core.geometry import StrataRegion, build_strata_region
from models.specs import InterfaceSpec, StrataRegionSpec

# ============================================================================
# CONSTANTS
# ============================================================================

UNIT_H = 0.25
FINE_H = 0.125
BASIS_RINGS = 2
BASIS_SECTORS = 3
PATCH_RADIUS = 0.6

TOP_TENSOR = [2.0, 0.3, 0.0, 1.5, 0.0, 1.0]
BOTTOM_TENSOR = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0]


# ============================================================================
# CORE OBJECTS
# ============================================================================


def region_spec(
    interfaces: Optional[Sequence[Dict[str, Any]]] = None,
    footprint: str = "disk",
    **overrides: Any,
) -> StrataRegionSpec:
    """Unit cylinder (R = M = 1) with a Sigma patch of radius 0.6."""
    if interfaces is None:
        interfaces = [{"offset": 0.5, "modes": [(1, 0, 0.05)]}]
    payload: Dict[str, Any] = {
        "radius": 1.0,
        "cap_height": 1.0,
        "sigma_patch_radius": PATCH_RADIUS,
        "footprint": footprint,
        "interfaces": [InterfaceSpec(**i) for i in interfaces],
    }
    payload.update(overrides)
    return StrataRegionSpec(**payload)


def make_region(interfaces: Optional[Sequence[Dict[str, Any]]] = None, **overrides: Any) -> StrataRegion:
    return build_strata_region(region_spec(interfaces, **overrides))


def flat_region(offset: float = 0.5) -> StrataRegion:
    return make_region([{"offset": offset}])


def make_model(region: StrataRegion, tensors: Optional[List[List[float]]] = None) -> StrataModel:
    tensors = tensors or [TOP_TENSOR, BOTTOM_TENSOR][: region.layer_count]
    while len(tensors) < region.layer_count:
        tensors = tensors + [[1.0 + 0.5 * len(tensors), 0.0, 0.0, 1.0, 0.0, 2.0]]
    return StrataModel(region=region, tensors=tuple(AnisoTensor.from_entries(t) for t in tensors))


# ============================================================================
# ARTIFACTS
# ============================================================================


def validate_report_file(path: Path, model: Type[BaseModel]) -> Dict[str, Any]:
    """
    Load a JSON report and validate it against the model's schema.

    Raises:
        jsonschema.ValidationError: Report does not match
    """
    payload = json.loads(Path(path).read_text())
    jsonschema.validate(instance=payload, schema=model.model_json_schema())
    return payload


def write_config(directory: Path, name: str, payload: Dict[str, Any]) -> Path:
    path = Path(directory) / name
    path.write_text(json.dumps(payload, indent=2))
    return path


def region_payload(interfaces: Optional[List[Dict[str, Any]]] = None) -> Dict[str, Any]:
    return {
        "radius": 1.0,
        "cap_height": 1.0,
        "sigma_patch_radius": PATCH_RADIUS,
        "interfaces": interfaces if interfaces is not None else [{"offset": 0.5, "modes": [[1, 0, 0.05]]}],
    }
