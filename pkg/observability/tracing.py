"""
OpenTelemetry spans for strata-eit.

Spans wrap the expensive steps (assembly, factorization, N-D builds,
inversion stages). When the SDK is missing every span is a no-op.
"""

from contextlib import contextmanager
from typing import Any, Iterator

import structlog

try:
    from opentelemetry import trace
    from opentelemetry.sdk.resources import SERVICE_NAME, Resource
    from opentelemetry.sdk.trace import TracerProvider
    from opentelemetry.sdk.trace.export import ConsoleSpanExporter, SimpleSpanProcessor

    OTEL_AVAILABLE = True
except ImportError:
    OTEL_AVAILABLE = False

logger = structlog.get_logger(__name__)

_configured = False


def configure_tracing(console: bool) -> None:
    """Install a tracer provider with a console exporter when requested."""
    global _configured
    if not OTEL_AVAILABLE or not console or _configured:
        return
    provider = TracerProvider(resource=Resource(attributes={SERVICE_NAME: "strata-eit"}))
    provider.add_span_processor(SimpleSpanProcessor(ConsoleSpanExporter()))
    trace.set_tracer_provider(provider)
    _configured = True
    logger.info("opentelemetry_console_tracing_enabled")


@contextmanager
def span(name: str, **attributes: Any) -> Iterator[Any]:
    """Open a span named ``name``; yields ``None`` when tracing is unavailable."""
    if not OTEL_AVAILABLE:
        yield None
        return
    tracer = trace.get_tracer("strata_eit")
    with tracer.start_as_current_span(name, attributes=attributes) as current:
        yield current
