"""
Runtime settings for strata-eit.

Numerics are configured by experiment files; this module only carries the
process-level knobs (logging, threads, solver switch-over, tracing, metrics),
read from ``STRATA_*`` environment variables or a local ``.env`` file.
"""

from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class RuntimeSettings(BaseSettings):
    """Process-level settings read from the environment."""

    model_config = SettingsConfigDict(env_prefix="STRATA_", env_file=".env", extra="ignore")

    log_level: str = Field(default="INFO", description="Minimum log level")
    log_json: bool = Field(default=False, description="Render logs as JSON lines")
    threads: int = Field(default=1, ge=1, description="Default worker threads (1 = serial)")
    direct_solver_limit: int = Field(
        default=200_000,
        ge=1,
        description="Above this many unknowns the CG path replaces sparse LU",
    )
    cg_rtol: float = Field(default=1e-12, gt=0, description="Relative residual for CG solves")
    trace_console: bool = Field(default=False, description="Export spans to the console")
    export_metrics: bool = Field(default=False, description="Write metrics.prom next to outputs")


@lru_cache(maxsize=1)
def get_settings() -> RuntimeSettings:
    """Return the cached process settings."""
    return RuntimeSettings()
