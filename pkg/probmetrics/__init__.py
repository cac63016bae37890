"""Probability metrics and Fourier-analytic rate certificates."""
__version__ = "0.1.0"
