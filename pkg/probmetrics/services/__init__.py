"""Numerical services: distributions, spectral, transport, bounds, harness."""
