"""Test suite for pyProbMetrics."""
