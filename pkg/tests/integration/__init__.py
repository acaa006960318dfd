"""Integration tests for the strata-eit command line."""
