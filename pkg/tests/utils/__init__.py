"""Test utilities for strata-eit."""
