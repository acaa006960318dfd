"""Command-line experiment driver for strata-eit."""
