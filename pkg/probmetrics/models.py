"""Numeric domain models.

All models are frozen dataclasses over read-only numpy arrays so they can be
shared between threads. JSON payloads live in ``probmetrics.schemas``; the
``from_spec``/``to_spec`` pairs below bridge the two layers.
"""
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Sequence, Tuple

import numpy as np

from probmetrics.exceptions import NumericalError, PreconditionError

WEIGHT_TOLERANCE = 1e-12
MARGINAL_TOLERANCE = 1e-9


class DistanceMethod(str, enum.Enum):
    """How a distance value was obtained."""
    QUANTILE_QUADRATURE = "quantile-quadrature"
    EXACT_OT = "exact-ot"
    ENTROPIC_OT = "entropic-ot"
    GRID_QUADRATURE = "grid-quadrature"
    CDF_QUADRATURE = "cdf-quadrature"
    MIXTURE_OT = "mixture-ot"


class EnvelopeSide(str, enum.Enum):
    """Which side of the Fourier pair an envelope table describes."""
    DENSITY = "density"
    FREQUENCY = "frequency"


class Regime(str, enum.Enum):
    """Certificate regimes."""
    LEMMA1 = "lemma1-poly"
    LEMMA2 = "lemma2-exp"
    POINTWISE = "pointwise"


class PerturbationKind(str, enum.Enum):
    """Perturbation families a sweep can run over."""
    TRANSLATE = "translate"
    SCALE = "scale"
    MIXTURE_WEIGHT = "mixture-weight"
    SMOOTHED_SEQUENCE = "smoothed-sequence"


def _frozen_array(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


def is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


# ============================================================================
# Analytic laws
# ============================================================================

@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Finite mixture of non-degenerate Gaussians on R^d."""
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = weights.shape[0]
        means = np.asarray(self.means, dtype=float).reshape(m, -1)
        d = means.shape[1]
        covs = np.asarray(self.covs, dtype=float).reshape(m, d, d)

        if d < 1 or m < 1:
            raise PreconditionError("mixture needs d >= 1 and at least one component")
        if np.any(weights <= 0) or np.any(weights > 1):
            raise PreconditionError("mixture weights must lie in (0, 1]")
        if abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise PreconditionError(f"mixture weights sum to {weights.sum()!r}, not 1")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
            raise PreconditionError("mixture parameters must be finite")
        for cov in covs:
            if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(cov).max())):
                raise PreconditionError("covariance matrices must be symmetric")
            if np.linalg.eigvalsh(cov).min() <= 0:
                raise PreconditionError("covariance matrices must be positive definite")

        object.__setattr__(self, "weights", _frozen_array(weights))
        object.__setattr__(self, "means", _frozen_array(means))
        object.__setattr__(self, "covs", _frozen_array(covs))

    @classmethod
    def gaussian(cls, mean=0.0, cov=1.0) -> "GaussianMixture":
        """Single Gaussian; scalars are read as a one-dimensional law."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(mean.shape[0])
        return cls(np.array([1.0]), mean[None, :], cov[None, :, :])

    @classmethod
    def from_spec(cls, spec) -> "GaussianMixture":
        return cls(
            np.array([c.w for c in spec.components]),
            np.array([c.mean for c in spec.components]),
            np.array([c.cov for c in spec.components]),
        )

    def to_spec(self):
        from probmetrics.schemas import ComponentSpec, MixtureSpec

        return MixtureSpec(
            d=self.d,
            components=[
                ComponentSpec(w=float(w), mean=m.tolist(), cov=c.tolist())
                for w, m, c in zip(self.weights, self.means, self.covs)
            ],
        )

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factors, one per component."""
        return np.linalg.cholesky(self.covs)

    @cached_property
    def stds(self) -> np.ndarray:
        """Per-component, per-axis marginal standard deviations, shape (m, d)."""
        return np.sqrt(np.diagonal(self.covs, axis1=1, axis2=2))

    def same_parameters(self, other: "GaussianMixture", atol: float = 0.0) -> bool:
        return (
            self.weights.shape == other.weights.shape
            and self.d == other.d
            and np.allclose(self.weights, other.weights, rtol=0, atol=atol)
            and np.allclose(self.means, other.means, rtol=0, atol=atol)
            and np.allclose(self.covs, other.covs, rtol=0, atol=atol)
        )


# ============================================================================
# Gridded laws
# ============================================================================

@dataclass(frozen=True, eq=False)
class GridDensity:
    """Nonnegative density values on a uniform box grid.

    Node j on axis k sits at ``lower[k] + j * spacing[k]``; the right endpoint
    is excluded.
    """
    lower: np.ndarray
    upper: np.ndarray
    values: np.ndarray
    mass_defect: float = 0.0
    raw_mass: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if values.ndim != lower.shape[0] or upper.shape != lower.shape:
            raise PreconditionError("grid box and value array disagree on dimension")
        if np.any(upper <= lower):
            raise PreconditionError("grid box must have positive width on every axis")
        if not all(is_power_of_two(n) for n in values.shape):
            raise PreconditionError(f"grid resolution {values.shape} is not a power of two per axis")
        if not np.all(np.isfinite(values)) or values.min() < 0:
            raise PreconditionError("density values must be finite and nonnegative")
        object.__setattr__(self, "lower", _frozen_array(lower))
        object.__setattr__(self, "upper", _frozen_array(upper))
        object.__setattr__(self, "values", _frozen_array(values))

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def resolution(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / np.array(self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def axes(self) -> List[np.ndarray]:
        return [lo + h * np.arange(n) for lo, h, n in zip(self.lower, self.spacing, self.resolution)]

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``resolution + (d,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def same_layout(self, other) -> bool:
        return (
            self.resolution == other.resolution
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def coarsened(self) -> "GridDensity":
        """Every second node per axis, same box."""
        values = self.values[tuple(slice(None, None, 2) for _ in range(self.d))]
        return GridDensity(self.lower, self.upper, values, self.mass_defect, self.raw_mass)


@dataclass(frozen=True, eq=False)
class CharGrid:
    """Complex values on the frequency grid dual to a spatial box grid.

    Node j on axis k sits at ``(j - n/2) * 2*pi / (upper[k] - lower[k])``. The
    spatial box is kept for the phase correction and for inversion.
    """
    lower: np.ndarray
    upper: np.ndarray
    values: np.ndarray
    is_char_fn: bool = True

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if values.ndim != lower.shape[0] or upper.shape != lower.shape:
            raise PreconditionError("frequency grid and box disagree on dimension")
        object.__setattr__(self, "lower", _frozen_array(lower))
        object.__setattr__(self, "upper", _frozen_array(upper))
        object.__setattr__(self, "values", _frozen_array(values, dtype=complex))
        if self.is_char_fn:
            if np.abs(values).max() > 1 + 1e-8:
                raise NumericalError("characteristic function exceeds 1 in modulus")
            if abs(values[self.zero_index] - 1) > 1e-8:
                raise NumericalError("characteristic function is not 1 at the origin")

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def resolution(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return 2 * np.pi / (self.upper - self.lower)

    @property
    def bound(self) -> np.ndarray:
        """Per-axis half width U of the frequency box."""
        return self.spacing * np.array(self.resolution) / 2

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def zero_index(self) -> Tuple[int, ...]:
        return tuple(n // 2 for n in self.resolution)

    def axes(self) -> List[np.ndarray]:
        return [(np.arange(n) - n // 2) * du for n, du in zip(self.resolution, self.spacing)]

    def coordinates(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def nearest(self, u) -> complex:
        """Value at the node closest to ``u``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.shape != (self.d,):
            raise PreconditionError(f"frequency has length {u.shape[0]}, grid has d={self.d}")
        index = tuple(
            int(np.clip(np.rint(uk / du) + n // 2, 0, n - 1))
            for uk, du, n in zip(u, self.spacing, self.resolution)
        )
        return complex(self.values[index])

    def same_layout(self, other) -> bool:
        return (
            self.resolution == other.resolution
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )


# ============================================================================
# Discrete laws
# ============================================================================

@dataclass(frozen=True, eq=False)
class AtomSet:
    """Finitely supported law: locations of shape (n, d), masses of shape (n,)."""
    locations: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        locations = np.asarray(self.locations, dtype=float).reshape(masses.shape[0], -1)
        if masses.shape[0] < 1:
            raise PreconditionError("atom set must hold at least one atom")
        if not np.all(np.isfinite(locations)):
            raise PreconditionError("atom locations must be finite")
        if np.any(masses <= 0) or np.any(masses > 1):
            raise PreconditionError("atom masses must lie in (0, 1]")
        if abs(masses.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise PreconditionError(f"atom masses sum to {masses.sum()!r}, not 1")
        object.__setattr__(self, "locations", _frozen_array(locations))
        object.__setattr__(self, "masses", _frozen_array(masses))

    @classmethod
    def uniform(cls, locations) -> "AtomSet":
        locations = np.asarray(locations, dtype=float)
        if locations.ndim == 1:
            locations = locations[:, None]
        n = locations.shape[0]
        return cls(locations, np.full(n, 1.0 / n))

    @classmethod
    def from_spec(cls, spec) -> "AtomSet":
        return cls(
            np.array([a.x for a in spec.atoms], dtype=float).reshape(len(spec.atoms), spec.d),
            np.array([a.m for a in spec.atoms]),
        )

    def to_spec(self):
        from probmetrics.schemas import AtomSetSpec, AtomSpec

        return AtomSetSpec(
            d=self.d,
            atoms=[AtomSpec(x=x.tolist(), m=float(m)) for x, m in zip(self.locations, self.masses)],
        )

    @property
    def d(self) -> int:
        return self.locations.shape[1]

    def __len__(self) -> int:
        return self.masses.shape[0]


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Coupling between two atom sets; ``matrix[i, j]`` is the mass moved from row atom i to column atom j."""
    rows: AtomSet
    cols: AtomSet
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.clip(np.asarray(self.matrix, dtype=float), 0.0, None)
        if matrix.shape != (len(self.rows), len(self.cols)):
            raise PreconditionError("plan shape does not match its marginals")
        if np.abs(matrix.sum(axis=1) - self.rows.masses).max() > MARGINAL_TOLERANCE:
            raise NumericalError("plan row sums differ from the row marginal")
        if np.abs(matrix.sum(axis=0) - self.cols.masses).max() > MARGINAL_TOLERANCE:
            raise NumericalError("plan column sums differ from the column marginal")
        object.__setattr__(self, "matrix", _frozen_array(matrix))

    def cost(self, cost_matrix: np.ndarray) -> float:
        return float(np.sum(self.matrix * cost_matrix))


# ============================================================================
# Constant ledger
# ============================================================================

@dataclass(frozen=True)
class ConstantLedger:
    """Every explicit constant entering a certificate, keyed by its indices."""
    gamma: Dict[int, float] = field(default_factory=dict)
    c_circ: Dict[int, float] = field(default_factory=dict)
    h: Dict[int, float] = field(default_factory=dict)
    hat_C: Dict[Tuple[int, int], float] = field(default_factory=dict)
    bar_C: Dict[Tuple[int, int], float] = field(default_factory=dict)
    theta: Dict[Tuple[int, int], float] = field(default_factory=dict)
    moments: Dict[float, float] = field(default_factory=dict)
    extra: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.flatten().items():
            if not math.isfinite(value):
                raise NumericalError(f"ledger constant {name} is not finite ({value!r})")
        for key, value in self.theta.items():
            if not 0 < value < 1:
                raise NumericalError(f"theta{list(key)} = {value!r} outside (0, 1)")

    def flatten(self) -> Dict[str, float]:
        """Flat ``name[indices] -> value`` view in a fixed order."""
        flat: Dict[str, float] = {}
        for name in ("gamma", "c_circ", "h", "hat_C", "bar_C", "theta", "moments"):
            for key, value in sorted(getattr(self, name).items()):
                index = ",".join(_format_index(k) for k in (key if isinstance(key, tuple) else (key,)))
                flat[f"{_LEDGER_LABELS[name]}[{index}]"] = float(value)
        for key in sorted(self.extra):
            flat[key] = float(self.extra[key])
        return flat


_LEDGER_LABELS = {
    "gamma": "gamma",
    "c_circ": "C_circ",
    "h": "h",
    "hat_C": "hat_C",
    "bar_C": "bar_C",
    "theta": "theta",
    "moments": "a_0",
}


def _format_index(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return f"{value:g}" if isinstance(value, float) else str(value)


def as_point(x: Sequence, d: int) -> np.ndarray:
    """Read ``x`` as exactly one point of R^d."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise PreconditionError(f"point has shape {x.shape}, law has d={d}")
    return x


def as_points(x: Sequence, d: int) -> np.ndarray:
    """Read ``x`` as a batch of points in R^d, shape (n, d).

    A flat array is a batch of scalars when d = 1 and a single point otherwise.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = x.reshape(-1, 1) if d == 1 else x[None, :]
    if x.ndim != 2 or x.shape[-1] != d:
        raise PreconditionError(f"points have shape {x.shape}, law has d={d}")
    return x
