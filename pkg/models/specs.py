"""
Experiment configuration models for strata-eit.

These pydantic models describe every structured config file the toolkit reads.
They validate shape and ranges only; geometric and physical invariants
(interface ordering, ellipticity, jump sizes) are enforced by the core types
built from them.

Models:
    - InterfaceSpec: one graph surface (offset + cosine modes)
    - StrataRegionSpec: the layered cylinder
    - ModelSpec: per-layer tensors as 6-value upper triangles
    - MeshSpec: target edge length and vertical sublayers
    - BasisSpec: facet-group layout of the flux basis on the measurement patch
    - DiffeoSpec: named diffeomorphism family and its parameters
    - InversionOptions: layer-stripping / Gauss-Newton controls
    - ProbeSpec: kernel asymptotics source point and radii
    - ExperimentSpec: one CLI experiment
"""

from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

CommandName = Literal["forward", "ndmap", "alessandrini", "gauge", "tangent", "invert"]


class InterfaceSpec(BaseModel):
    """
    A graph surface x_n = offset + sum_i a_i cos(p_i pi x1 / R) cos(q_i pi x2 / R).

    Example:
        {"offset": 0.5, "modes": [[1, 0, 0.05]]}
    """

    offset: float = Field(..., description="Depth offset d_k (length units)")
    modes: List[Tuple[int, int, float]] = Field(
        default_factory=list,
        description="Cosine modes as (p, q, amplitude) triples",
    )

    @field_validator("modes")
    @classmethod
    def validate_modes(cls, v: List[Tuple[int, int, float]]) -> List[Tuple[int, int, float]]:
        """Mode indices are non-negative and (0, 0) is carried by the offset."""
        seen = set()
        for p, q, _ in v:
            if p < 0 or q < 0:
                raise ValueError(f"mode indices must be non-negative, got ({p}, {q})")
            if (p, q) == (0, 0):
                raise ValueError("mode (0, 0) is the offset; use 'offset' instead")
            if (p, q) in seen:
                raise ValueError(f"duplicate mode ({p}, {q})")
            seen.add((p, q))
        return v


class StrataRegionSpec(BaseModel):
    """
    The layered cylinder |x'| <= R, phi_0 <= x_n <= M.

    Example:
        {
            "radius": 1.0,
            "cap_height": 1.0,
            "sigma_patch_radius": 0.6,
            "interfaces": [{"offset": 0.5, "modes": [[1, 0, 0.05]]}]
        }
    """

    radius: float = Field(..., gt=0, description="Footprint radius R")
    cap_height: float = Field(..., gt=0, description="Cap height M")
    sigma_patch_radius: float = Field(..., gt=0, description="Radius r_Sigma of the patch")
    footprint: Literal["disk", "square"] = Field(
        default="disk", description="Cross-section: disk |x'| <= R or square [-R, R]^2"
    )
    top_surface: InterfaceSpec = Field(
        default_factory=lambda: InterfaceSpec(offset=0.0),
        description="phi_0, the measured surface",
    )
    interfaces: List[InterfaceSpec] = Field(
        default_factory=list, description="phi_1 ... phi_K, ordered by depth"
    )
    min_gap: Optional[float] = Field(
        default=None, gt=0, description="Minimum layer gap; defaults to 0.05 * cap_height"
    )
    sample_grid: int = Field(default=64, ge=64, description="Ordering check grid per axis")

    @model_validator(mode="after")
    def validate_patch(self) -> "StrataRegionSpec":
        """The patch must sit strictly inside the footprint."""
        if self.sigma_patch_radius >= self.radius:
            raise ValueError("sigma_patch_radius must be smaller than radius")
        return self


class ModelSpec(BaseModel):
    """
    Per-layer conductivity tensors, top to bottom.

    Example:
        {"tensors": [[1, 0, 0, 1, 0, 1], [2, 0.1, 0, 1.5, 0, 3]]}
    """

    tensors: List[List[float]] = Field(..., min_length=1, description="Upper-triangle 6-lists")
    ellipticity: float = Field(default=1.0e3, ge=1.0, description="Ellipticity constant lambda")
    jump_tolerance: float = Field(
        default=1.0e-6, ge=0, description="delta_jump; 0 disables the jump check"
    )

    @field_validator("tensors")
    @classmethod
    def validate_tensor_shape(cls, v: List[List[float]]) -> List[List[float]]:
        """Every tensor is given by exactly six upper-triangle values."""
        for i, entries in enumerate(v):
            if len(entries) != 6:
                raise ValueError(f"tensor {i} must have 6 entries, got {len(entries)}")
        return v


class MeshSpec(BaseModel):
    """Target edge length and optional fixed sublayer counts per stratum."""

    h: float = Field(..., gt=0, description="Target edge length")
    sublayers: Optional[List[int]] = Field(
        default=None, description="Sublayers per stratum; derived from h when omitted"
    )
    sublayers_per_stratum: Optional[int] = Field(
        default=None, ge=1, description="Same sublayer count for every stratum"
    )

    @field_validator("sublayers")
    @classmethod
    def validate_sublayers(cls, v: Optional[List[int]]) -> Optional[List[int]]:
        """Sublayer counts are positive."""
        if v is not None and any(n < 1 for n in v):
            raise ValueError("sublayer counts must be >= 1")
        return v


class BasisSpec(BaseModel):
    """
    Facet-group layout on the patch: equal-area rings, ring i (0-based) split into
    base_sectors * (i + 1) sectors. Defaults give 30 groups.
    """

    rings: int = Field(default=3, ge=1)
    base_sectors: int = Field(default=5, ge=2)


class DiffeoSpec(BaseModel):
    """
    A named diffeomorphism family.

    Families:
        identity   - no parameters
        bump_shift - x + amplitude * b(x) * direction, b a C^2 bump of given radius
        twist      - rotation about the vertical axis through center by amplitude * b(x)
        shear      - x + (x_n - center_n) * amplitude * direction (linear, flat-case gauge)
    """

    family: Literal["identity", "bump_shift", "twist", "shear"] = "identity"
    center: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.5])
    radius: float = Field(default=0.3, gt=0)
    amplitude: float = 0.0
    direction: List[float] = Field(default_factory=lambda: [1.0, 0.0, 0.0])

    @field_validator("center", "direction")
    @classmethod
    def validate_vector(cls, v: List[float]) -> List[float]:
        """Points and directions are 3-vectors."""
        if len(v) != 3:
            raise ValueError("expected a 3-vector")
        return v


class InversionOptions(BaseModel):
    """Controls for fit_top_tensor and strip_layers."""

    k_max: int = Field(default=3, ge=1, description="Maximum number of interfaces")
    interface_modes: List[Tuple[int, int]] = Field(
        default_factory=lambda: [(1, 0)], description="Cosine modes fitted per interface"
    )
    rho_accept: float = Field(default=10.0, gt=1.0, description="Required misfit drop factor")
    merge_jump: float = Field(default=1.0e-6, gt=0, description="delta_jump for merging")
    misfit_floor: float = Field(default=1.0e-16, gt=0, description="Noise floor of the misfit")
    misfit_tolerance: float = Field(default=1.0e-20, gt=0, description="Converged misfit")
    step_tolerance: float = Field(default=1.0e-12, gt=0)
    max_iterations: int = Field(default=30, ge=1)
    max_backtracks: int = Field(default=12, ge=1)
    lm_damping: float = Field(default=1.0e-6, ge=0, description="Levenberg-Marquardt damping")
    tensor_fd_step: float = Field(default=1.0e-4, gt=0, description="Relative to tensor scale")
    interface_fd_step: float = Field(default=1.0e-4, gt=0, description="Relative to cap height")
    jacobian_scheme: Literal["forward", "central"] = "forward"
    initial_depth_fraction: float = Field(default=0.5, gt=0, lt=1)
    deeper_init_scales: List[float] = Field(default_factory=lambda: [0.5, 2.0])
    ellipticity: float = Field(default=1.0e3, ge=1.0)
    strict_iterations: bool = Field(
        default=False, description="Raise MaxIterations instead of recording the stop"
    )


class ProbeSpec(BaseModel):
    """Kernel asymptotics probe: source point on the patch and mollifier radii."""

    point: List[float] = Field(default_factory=lambda: [0.0, 0.0])
    radii: List[float] = Field(default_factory=lambda: [0.4, 0.3, 0.2], min_length=1)


class ExperimentSpec(BaseModel):
    """
    One CLI experiment.

    The command decides which sections are required:
        forward       region, model, mesh
        ndmap         region, model, mesh, basis
        alessandrini  region, model, mesh, basis, trials (randomized: seed required)
        gauge         region, model, resolutions, basis, diffeo (+ optional contrast)
        tangent       trials (randomized: seed required)
        invert        region (+ truth model or data_csv), mesh, basis, inversion
    """

    command: CommandName
    region: Optional[StrataRegionSpec] = None
    model: Optional[ModelSpec] = None
    mesh: Optional[MeshSpec] = None
    resolutions: Optional[List[float]] = Field(default=None, min_length=1)
    basis: BasisSpec = Field(default_factory=BasisSpec)
    diffeo: Optional[DiffeoSpec] = None
    contrast_region: Optional[StrataRegionSpec] = None
    contrast_model: Optional[ModelSpec] = None
    inversion: Optional[InversionOptions] = None
    data_csv: Optional[Path] = None
    probe: Optional[ProbeSpec] = None
    trials: int = Field(default=20, ge=1)
    seed: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def validate_sections(self) -> "ExperimentSpec":
        """Each command carries the sections it needs."""
        required = {
            "forward": ("region", "model", "mesh"),
            "ndmap": ("region", "model", "mesh"),
            "alessandrini": ("region", "model", "mesh"),
            "gauge": ("region", "model", "resolutions", "diffeo"),
            "tangent": (),
            "invert": ("region", "mesh", "inversion"),
        }[self.command]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"command '{self.command}' requires: {', '.join(missing)}")
        if self.command == "invert" and self.model is None and self.data_csv is None:
            raise ValueError("command 'invert' requires a truth 'model' or a 'data_csv'")
        return self

    @property
    def randomized(self) -> bool:
        """Whether the experiment draws random samples."""
        return self.command in ("alessandrini", "tangent")
