"""Toolkit configuration management."""
import logging
from functools import lru_cache

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Toolkit settings loaded from environment variables.

    Every field has a default; nothing has to be set for the toolkit to run.
    """

    # Application
    APP_NAME: str = "pyProbMetrics"
    APP_VERSION: str = "0.1.0"
    LOG_LEVEL: str = "WARNING"

    # Grids
    DEFAULT_RESOLUTION_1D: int = 4096
    DEFAULT_RESOLUTION_2D: int = 512
    DEFAULT_RESOLUTION_3D: int = 64
    BOX_SIGMAS: float = 10.0
    BOX_QUANTUM: float = 1.0
    AUTO_BOX_DELTA: float = 1e-10
    MASS_TOLERANCE: float = 1e-6
    MASS_WARN_TOLERANCE: float = 1e-8
    MAX_GRID_NODES: int = 2**24

    # Quadrature
    QUANTILE_XTOL: float = 1e-13
    GH_ORDER: int = 96
    MOMENT_EPSREL: float = 1e-10

    # Distances
    RHO_TOLERANCE: float = 1e-4
    RHO_MAX_REFINEMENTS: int = 3
    OT_MAX_CELLS: int = 10**6
    OT_MAX_ITER: int = 10**7
    MIXTURE_OT_NODES: int = 10**5
    SINKHORN_EPS_RATIO: float = 1e-5
    SINKHORN_ANNEAL_FACTOR: float = 0.5
    SINKHORN_MAX_ITER: int = 2000
    SINKHORN_STOP: float = 1e-9
    SINKHORN_TOLERANCE: float = 1e-4

    # Envelopes
    ENVELOPE_NOISE_FLOOR: float = 1e-13
    NYQUIST_TOLERANCE: float = 1e-8
    EXP_RESOLVED_FLOOR: float = 1e-12
    EXP_FIT_BAND: float = 0.25

    # Bounds
    EXP_MOMENT_RATE: float = 1.0

    # Harness
    SWEEP_MAX_FAILED_FRACTION: float = 0.2
    SWEEP_WORKERS: int = 1
    SWEEP_SEED: int = 0
    OT_ATOMS_PER_AXIS: int = 16

    class Config:
        env_file = ".env"
        case_sensitive = True


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


def configure_logging(level: str | None = None) -> None:
    """Install the console handler used by the command line tools."""
    logging.basicConfig(
        level=(level or get_settings().LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
