"""Error hierarchy shared by all services.

Each class carries the exit code the command line maps it to.
"""
from typing import Optional


class ProbMetricsError(Exception):
    """Base class for toolkit errors."""
    exit_code = 1


# ============================================================================
# Precondition violations (exit 2)
# ============================================================================

class PreconditionError(ProbMetricsError, ValueError):
    """Invalid input: dimension mismatch, q <= 1, odd p, l <= d and so on."""
    exit_code = 2


class EnvelopeCoverageError(PreconditionError):
    """An envelope table lacks an entry a certificate needs."""

    def __init__(self, side: str, k: int, l: Optional[int] = None):
        where = f"k={k}" if l is None else f"k={k}, l={l}"
        super().__init__(f"{side} envelope table does not cover {where}")
        self.side = side
        self.k = k
        self.l = l


class SizeLimitError(PreconditionError):
    """Exact transport problem larger than the configured cell budget."""

    def __init__(self, cells: int, limit: int):
        super().__init__(f"transport problem has {cells} cells, limit is {limit}")
        self.cells = cells
        self.limit = limit


# ============================================================================
# Numerical failures (exit 3)
# ============================================================================

class NumericalError(ProbMetricsError, ArithmeticError):
    """A numerical procedure failed to deliver a usable result."""
    exit_code = 3


class PrecisionError(NumericalError):
    """Grid too small or too coarse for the requested accuracy."""

    def __init__(self, message: str, defect: Optional[float] = None):
        super().__init__(message)
        self.defect = defect


class UnresolvableGridError(PrecisionError):
    """Quadrature error estimate stays above tolerance after refinement."""


class UnstableDifferentiationError(PrecisionError):
    """Spectral derivative order too high for the grid resolution."""


class NonExponentialTailError(NumericalError):
    """Tail of a characteristic function derivative is not exponentially decaying."""

    def __init__(self, k: int, slope: float):
        super().__init__(
            f"order {k} tail slope {slope:.3g} is not negative; "
            "exponential decay hypotheses are not certified"
        )
        self.k = k
        self.slope = slope


class ConvergenceError(NumericalError):
    """Iterative solver did not converge within its iteration cap."""


# ============================================================================
# Certificate outcome (exit 4)
# ============================================================================

class CertificateViolation(ProbMetricsError):
    """A sweep produced a row whose measured side exceeds its bound."""
    exit_code = 4

    def __init__(self, scenario: str, violations: list):
        super().__init__(
            f"scenario {scenario!r}: certificate violated at h = "
            + ", ".join(f"{h:g}" for h in violations)
        )
        self.scenario = scenario
        self.violations = violations
