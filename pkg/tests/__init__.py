"""Test suite for strata-eit."""
