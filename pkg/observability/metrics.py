"""
Prometheus metrics for strata-eit.

Metrics:
    - strata_meshes_built_total: Counter for tetrahedral meshes produced
    - strata_assemblies_total: Counter for stiffness assemblies
    - strata_assembly_duration_seconds: Histogram of assembly wall time
    - strata_factorizations_total: Counter for saddle-point factorizations
    - strata_forward_solves_total: Counter for Neumann solves (labels: solver)
    - strata_nd_builds_total: Counter for N-D matrices built
    - strata_gauss_newton_iterations_total: Counter for accepted Gauss-Newton steps (labels: stage)
    - strata_experiments_total: Counter for CLI experiments (labels: command, status)
"""

import os

from prometheus_client import REGISTRY, CollectorRegistry, Counter, Histogram, generate_latest

# Use a separate registry for tests to avoid duplicate-registration conflicts
if os.getenv("PYTEST_CURRENT_TEST"):
    registry = CollectorRegistry()
else:
    registry = REGISTRY

strata_meshes_built_total = Counter(
    "strata_meshes_built_total",
    "Total number of tetrahedral meshes produced",
    registry=registry,
)

strata_assemblies_total = Counter(
    "strata_assemblies_total",
    "Total number of stiffness matrix assemblies",
    registry=registry,
)

strata_assembly_duration_seconds = Histogram(
    "strata_assembly_duration_seconds",
    "Wall time of stiffness assembly in seconds",
    buckets=[0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 30.0],
    registry=registry,
)

strata_factorizations_total = Counter(
    "strata_factorizations_total",
    "Total number of saddle-point factorizations",
    registry=registry,
)

strata_forward_solves_total = Counter(
    "strata_forward_solves_total",
    "Total number of Neumann forward solves",
    ["solver"],  # solver=direct|cg
    registry=registry,
)

strata_nd_builds_total = Counter(
    "strata_nd_builds_total",
    "Total number of Neumann-to-Dirichlet matrices built",
    registry=registry,
)

strata_gauss_newton_iterations_total = Counter(
    "strata_gauss_newton_iterations_total",
    "Total number of accepted Gauss-Newton steps",
    ["stage"],  # stage=top|strip|joint|fit
    registry=registry,
)

strata_experiments_total = Counter(
    "strata_experiments_total",
    "Total number of CLI experiments run",
    ["command", "status"],  # status=ok|error
    registry=registry,
)


def render_metrics() -> bytes:
    """Render the active registry in the Prometheus text format."""
    return generate_latest(registry)
