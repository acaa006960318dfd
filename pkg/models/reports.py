"""
Report models written by the strata-eit experiments.

Every report is serialised as JSON with sorted keys and validated against the
JSON schema generated from its model before it is written.

Models:
    - TensorReport, SurfaceReport, StageReport: pieces of an inversion report
    - InversionReport: recovered K, tensors, interfaces, misfit history, stopping reason
    - ForwardReport: solve diagnostics (energy, reciprocity, probe asymptotics)
    - NDMapReport: N-D matrix diagnostics and identity checks
    - AlessandriniReport: randomized discrete Alessandrini suite
    - GaugeReport: gauge counterexample gap under refinement
    - TangentReport: randomized tangent-plane recovery suite
    - ManifestEntry, Manifest: artifact listing with content hashes
"""

from typing import List, Optional

from pydantic import BaseModel, Field

from models.specs import InterfaceSpec


class TensorReport(BaseModel):
    """One stratum tensor as upper-triangle entries."""

    index: int = Field(..., ge=1, description="Stratum index, 1 = top")
    entries: List[float] = Field(..., min_length=6, max_length=6)


class SurfaceReport(BaseModel):
    index: int = Field(..., ge=0, description="Surface index, 0 = measured top surface")
    non_flat_certified: bool = Field(..., description="Three or more distinct normals were found")


class StageReport(BaseModel):
    stage: int
    accepted: bool
    misfit_before: float
    misfit_after: float
    jump: float
    reason: str
    iterations: int


class TruthComparison(BaseModel):
    """Distances between a reconstruction and the model that generated the data."""

    layer_count_matches: bool
    tensor_relative_errors: List[float] = Field(default_factory=list)
    interface_coefficient_errors: List[float] = Field(
        default_factory=list, description="Absolute errors in units of the cap height"
    )


class InversionReport(BaseModel):
    """
    Output of strip_layers.

    Example:
        {
            "layer_count": 1,
            "tensors": [{"index": 1, "entries": [1, 0, 0, 1, 0, 1]}, ...],
            "interfaces": [{"offset": 0.5, "modes": [[1, 0, 0.05]]}],
            "misfit_history": [0.02, 1e-05, 3e-21],
            "stopping_reason": "merged_interface_2"
        }
    """

    layer_count: int = Field(..., ge=0)
    tensors: List[TensorReport]
    interfaces: List[InterfaceSpec]
    surfaces: List[SurfaceReport] = Field(default_factory=list)
    misfit_history: List[float]
    final_misfit: float
    stopping_reason: str
    refinement_reason: str = "skipped"
    stages: List[StageReport] = Field(default_factory=list)
    truth: Optional[TruthComparison] = None
    contrast_verdict: Optional[str] = Field(
        default=None, description="IDENTIFIABLE / NON-IDENTIFIABLE against the contrast run"
    )
    contrast_data_gap: Optional[float] = Field(
        default=None, description="Relative Frobenius distance between the measured and contrast N-D matrices"
    )


class AsymptoticsRowReport(BaseModel):
    radius: float
    fitted_form: List[List[float]]
    reference_form: List[List[float]]
    condition: float
    axis_angle_deg: float
    relative_error: float
    samples: int


class ForwardReport(BaseModel):
    vertices: int
    tets: int
    sigma_facets: int
    sublayers: List[int]
    volume: float
    sigma_area: float
    energies: List[float]
    pairings: List[float]
    boundary_means: List[float]
    reciprocity_gap: float
    asymptotics: List[AsymptoticsRowReport] = Field(default_factory=list)


class NDMapReport(BaseModel):
    size: int
    mesh_id: str
    model_id: str
    basis_id: str
    symmetry_error: float
    min_eigenvalue: float
    max_eigenvalue: float
    local_global_gap: float
    invisible_interface_gap: Optional[float] = Field(
        default=None, description="N-D change when a stratum is split with equal tensors"
    )


class AlessandriniReport(BaseModel):
    trials: int
    seed: int
    residuals: List[float]
    max_residual: float
    tolerance: float
    passed: bool


class GaugeRow(BaseModel):
    h: float
    tets: int
    gap: float


class GaugeReport(BaseModel):
    diffeo: str
    rows: List[GaugeRow]
    ratios: List[float]
    contrast_rows: List[GaugeRow] = Field(default_factory=list)
    contrast_ratios: List[float] = Field(default_factory=list)
    ratio_limit: float = 0.7
    contrast_floor: float = 0.0
    flat_converges: bool = False
    contrast_stabilizes: Optional[bool] = None
    passed: bool = False


class TangentReport(BaseModel):
    trials: int
    seed: int
    max_relative_error: float
    single_normal_rejected: bool
    two_normals_rejected: bool
    certificate_points: int


class ManifestEntry(BaseModel):
    path: str
    sha256: str
    bytes: int


class Manifest(BaseModel):
    command: str
    seed: Optional[int] = None
    artifacts: List[ManifestEntry]
