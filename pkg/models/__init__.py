"""Pydantic models for experiment configs and reports."""

from .reports import (
    AlessandriniReport,
    ForwardReport,
    GaugeReport,
    InversionReport,
    Manifest,
    ManifestEntry,
    NDMapReport,
    TangentReport,
)
from .specs import (
    BasisSpec,
    DiffeoSpec,
    ExperimentSpec,
    InterfaceSpec,
    InversionOptions,
    MeshSpec,
    ModelSpec,
    ProbeSpec,
    StrataRegionSpec,
)

__all__ = [
    "AlessandriniReport",
    "BasisSpec",
    "DiffeoSpec",
    "ExperimentSpec",
    "ForwardReport",
    "GaugeReport",
    "InterfaceSpec",
    "InversionOptions",
    "InversionReport",
    "Manifest",
    "ManifestEntry",
    "MeshSpec",
    "ModelSpec",
    "NDMapReport",
    "ProbeSpec",
    "StrataRegionSpec",
    "TangentReport",
]
