"""Observability for strata-eit: structured logs, Prometheus metrics, spans."""
