"""Gaussian-mixture laws: densities, moments, quantiles, grids, atoms."""
import json
import logging
import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, optimize, special, stats

from probmetrics.config import get_settings
from probmetrics.exceptions import PrecisionError, PreconditionError
from probmetrics.models import AtomSet, GaussianMixture, GridDensity, as_point, as_points, is_power_of_two
from probmetrics.schemas import AtomSetSpec, MixtureSpec

logger = logging.getLogger(__name__)

Box = np.ndarray  # shape (d, 2): one [a_j, b_j] row per axis


def _require_1d(dist: GaussianMixture, what: str) -> None:
    if dist.d != 1:
        raise PreconditionError(f"{what} is only defined for d = 1, got d={dist.d}")


# ============================================================================
# Densities
# ============================================================================

def density_values(dist: GaussianMixture, points) -> np.ndarray:
    """Mixture density at a batch of points of shape (n, d)."""
    points = as_points(points, dist.d)
    total = np.zeros(points.shape[0])
    for w, mean, cov in zip(dist.weights, dist.means, dist.covs):
        total += w * stats.multivariate_normal.pdf(points, mean=mean, cov=cov).reshape(-1)
    return total


def density_eval(dist: GaussianMixture, x) -> float:
    """
    Mixture density at one point.

    Args:
        dist: Gaussian mixture on R^d
        x: point of length d (a scalar is accepted when d = 1)

    Returns:
        The density value.
    """
    return float(density_values(dist, as_point(x, dist.d)[None, :])[0])


def cdf_1d(dist: GaussianMixture, x):
    _require_1d(dist, "cdf_1d")
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - dist.means[:, 0]) / dist.stds[:, 0]
    return np.sum(dist.weights * special.ndtr(z), axis=-1)


def sf_1d(dist: GaussianMixture, x):
    _require_1d(dist, "sf_1d")
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - dist.means[:, 0]) / dist.stds[:, 0]
    return np.sum(dist.weights * special.ndtr(-z), axis=-1)


# ============================================================================
# Moments
# ============================================================================

def _log_abs_moment_normal_1d(mean: float, std: float, p: float) -> float:
    # E|m + sZ|^p = s^p 2^{p/2} Gamma((p+1)/2) / sqrt(pi) * 1F1(-p/2; 1/2; -m^2 / (2 s^2))
    kummer = special.hyp1f1(-p / 2, 0.5, -mean**2 / (2 * std**2))
    return (
        p * math.log(std)
        + 0.5 * p * math.log(2.0)
        + special.gammaln((p + 1) / 2)
        - 0.5 * math.log(math.pi)
        + math.log(kummer)
    )


def gauss_hermite_nodes(d: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Hermite rule for E g(Z), Z ~ N(0, I_d)."""
    t, w = np.polynomial.hermite.hermgauss(order)
    grids = np.meshgrid(*([t] * d), indexing="ij")
    nodes = math.sqrt(2.0) * np.stack([g.reshape(-1) for g in grids], axis=-1)
    weights = np.ones(nodes.shape[0])
    for g in np.meshgrid(*([w] * d), indexing="ij"):
        weights = weights * g.reshape(-1)
    return nodes, weights / math.pi ** (d / 2)


def _whitened_expectation(dist: GaussianMixture, fn, radius: float) -> float:
    """sum_j w_j E fn(m_j + L_j Z) by adaptive quadrature over [-radius, radius]^d."""
    settings = get_settings()
    total = 0.0
    for w, mean, chol in zip(dist.weights, dist.means, dist.cholesky):
        def integrand(*z, mean=mean, chol=chol):
            z = np.asarray(z)
            x = mean + chol @ z
            return fn(x) * math.exp(-0.5 * float(z @ z)) / (2 * math.pi) ** (dist.d / 2)

        value, _ = integrate.nquad(
            integrand, [[-radius, radius]] * dist.d, opts={"epsrel": settings.MOMENT_EPSREL, "limit": 200}
        )
        total += w * value
    return total


def abs_moment(dist: GaussianMixture, p: float) -> float:
    """
    Absolute moment E|X|^p.

    Closed form for every real p in one dimension; an exact Gauss-Hermite
    tensor rule for even integer p and adaptive quadrature otherwise when d > 1.
    """
    if p < 0 or not math.isfinite(p):
        raise PreconditionError(f"moment order must be finite and >= 0, got {p}")
    if p == 0:
        return 1.0
    if dist.d == 1:
        logs = [
            math.log(w) + _log_abs_moment_normal_1d(m[0], s[0], p)
            for w, m, s in zip(dist.weights, dist.means, dist.stds)
        ]
        return float(np.exp(special.logsumexp(logs)))
    if float(p).is_integer() and int(p) % 2 == 0:
        nodes, weights = gauss_hermite_nodes(dist.d, int(p) // 2 + 1)
        total = 0.0
        for w, mean, chol in zip(dist.weights, dist.means, dist.cholesky):
            x = mean + nodes @ chol.T
            total += w * float(weights @ np.sum(x * x, axis=1) ** (int(p) // 2))
        return total
    logger.debug("abs_moment: adaptive quadrature for p=%s, d=%d", p, dist.d)
    return _whitened_expectation(dist, lambda x: float(np.linalg.norm(x)) ** p, 10.0 + math.sqrt(p))


def exp_moment(dist: GaussianMixture, r: float) -> float:
    """Exponential moment E exp(r|X|)."""
    if r <= 0:
        raise PreconditionError(f"exponential moment rate must be positive, got {r}")
    if dist.d == 1:
        m = dist.means[:, 0]
        s = dist.stds[:, 0]
        half = r * r * s * s / 2
        # E exp(r|m + sZ|) splits at the sign change of m + sZ
        upper = np.exp(r * m + half) * special.ndtr(m / s + r * s)
        lower = np.exp(-r * m + half) * special.ndtr(-m / s + r * s)
        return float(np.sum(dist.weights * (upper + lower)))
    spread = float(np.sqrt(np.linalg.eigvalsh(dist.covs).max()))
    return _whitened_expectation(
        dist, lambda x: math.exp(r * float(np.linalg.norm(x))), 10.0 + r * spread
    )


# ============================================================================
# Quantiles
# ============================================================================

def _bracket(dist: GaussianMixture, z: float) -> Tuple[float, float]:
    # F(min_j(m_j + s_j z)) <= Phi(z) <= F(max_j(m_j + s_j z))
    points = dist.means[:, 0] + dist.stds[:, 0] * z
    return float(points.min()), float(points.max())


def quantile_1d(dist: GaussianMixture, u: float) -> float:
    """F^{-1}(u) by bracketed root finding on the mixture CDF."""
    _require_1d(dist, "quantile_1d")
    if not 0 < u < 1:
        raise PreconditionError(f"quantile level must lie in (0, 1), got {u}")
    z = float(special.ndtri(u))
    lo, hi = _bracket(dist, z)
    if dist.n_components == 1 or lo == hi:
        return lo
    return optimize.brentq(
        lambda x: float(cdf_1d(dist, x)) - u, lo, hi, xtol=get_settings().QUANTILE_XTOL, rtol=4 * np.finfo(float).eps
    )


def quantile_1d_tail(dist: GaussianMixture, t: float) -> float:
    """F^{-1}(Phi(t)), solved on the survival function when t > 0."""
    _require_1d(dist, "quantile_1d_tail")
    lo, hi = _bracket(dist, t)
    if dist.n_components == 1 or lo == hi:
        return lo
    xtol = get_settings().QUANTILE_XTOL
    if t <= 0:
        target = float(special.ndtr(t))
        return optimize.brentq(lambda x: float(cdf_1d(dist, x)) - target, lo, hi, xtol=xtol)
    target = float(special.ndtr(-t))
    return optimize.brentq(lambda x: target - float(sf_1d(dist, x)), lo, hi, xtol=xtol)


# ============================================================================
# Transformations
# ============================================================================

def smooth(dist: GaussianMixture, sigma: float) -> GaussianMixture:
    """Law of X + theta with theta ~ N(0, sigma^2 I) independent of X."""
    if not sigma > 0:
        raise PreconditionError(f"smoothing sigma must be positive, got {sigma}")
    return GaussianMixture(dist.weights, dist.means, dist.covs + sigma**2 * np.eye(dist.d))


def translate(dist: GaussianMixture, shift) -> GaussianMixture:
    shift = as_point(shift, dist.d)
    return GaussianMixture(dist.weights, dist.means + shift, dist.covs)


def dilate(dist: GaussianMixture, factor: float) -> GaussianMixture:
    """Widen every component: covariances times factor^2, means unchanged."""
    if not factor > 0:
        raise PreconditionError(f"dilation factor must be positive, got {factor}")
    return GaussianMixture(dist.weights, dist.means, dist.covs * factor**2)


def shift_weight(dist: GaussianMixture, delta: float) -> GaussianMixture:
    """Move weight delta from the last component to the first one."""
    if dist.n_components < 2:
        raise PreconditionError("weight shift needs at least two components")
    weights = np.array(dist.weights)
    weights[0] += delta
    weights[-1] -= delta
    return GaussianMixture(weights, dist.means, dist.covs)


def contaminate(base: GaussianMixture, contaminant: GaussianMixture, h: float) -> GaussianMixture:
    """(1 - h) * base + h * contaminant."""
    if not 0 < h < 1:
        raise PreconditionError(f"contamination level must lie in (0, 1), got {h}")
    if base.d != contaminant.d:
        raise PreconditionError("base and contaminant differ in dimension")
    weights = np.concatenate([(1 - h) * base.weights, h * contaminant.weights])
    weights = weights / weights.sum()
    return GaussianMixture(
        weights,
        np.concatenate([base.means, contaminant.means]),
        np.concatenate([base.covs, contaminant.covs]),
    )


# ============================================================================
# Boxes and grids
# ============================================================================

def _as_box(box, d: int) -> Box:
    box = np.asarray(box, dtype=float)
    if d == 1 and box.shape == (2,):
        box = box[None, :]
    if box.shape != (d, 2):
        raise PreconditionError(f"box must hold one [a, b] pair per axis, got shape {box.shape}")
    if np.any(box[:, 1] <= box[:, 0]):
        raise PreconditionError("box intervals must have positive width")
    return box


def mass_outside(dist: GaussianMixture, box) -> float:
    """Union bound on the mass outside ``box`` from the marginal Gaussian tails (exact for d = 1)."""
    box = _as_box(box, dist.d)
    below = special.ndtr((box[:, 0] - dist.means) / dist.stds)
    above = special.ndtr((dist.means - box[:, 1]) / dist.stds)
    return float(np.sum(dist.weights[:, None] * (below + above)))


def auto_box(
    dist: GaussianMixture,
    delta: Optional[float] = None,
    min_sigmas: float = 0.0,
    quantum: Optional[float] = None,
) -> Box:
    """
    Smallest per-component sigma box whose tail defect is at most delta.

    Args:
        dist: the law to enclose
        delta: admissible mass outside the box (default AUTO_BOX_DELTA)
        min_sigmas: lower bound on the half width in standard deviations
        quantum: when given, endpoints are rounded outward to multiples of it

    Returns:
        Array of shape (d, 2).
    """
    delta = get_settings().AUTO_BOX_DELTA if delta is None else delta
    if not 0 < delta < 1:
        raise PreconditionError(f"box defect must lie in (0, 1), got {delta}")
    k = max(-float(special.ndtri(delta / (2 * dist.d))), min_sigmas)
    lower = (dist.means - k * dist.stds).min(axis=0)
    upper = (dist.means + k * dist.stds).max(axis=0)
    if quantum:
        lower = np.floor(lower / quantum) * quantum
        upper = np.ceil(upper / quantum) * quantum
    return np.stack([lower, upper], axis=1)


def common_box(
    a: GaussianMixture,
    b: GaussianMixture,
    delta: Optional[float] = None,
    min_sigmas: Optional[float] = None,
    quantum: Optional[float] = None,
) -> Box:
    """Per-axis union of the two auto boxes, snapped outward to the box quantum."""
    if a.d != b.d:
        raise PreconditionError(f"laws differ in dimension ({a.d} vs {b.d})")
    settings = get_settings()
    min_sigmas = settings.BOX_SIGMAS if min_sigmas is None else min_sigmas
    quantum = settings.BOX_QUANTUM if quantum is None else quantum
    box_a = auto_box(a, delta, min_sigmas, quantum)
    box_b = auto_box(b, delta, min_sigmas, quantum)
    return np.stack([np.minimum(box_a[:, 0], box_b[:, 0]), np.maximum(box_a[:, 1], box_b[:, 1])], axis=1)


def grid_resolution(d: int, override: Optional[int] = None) -> Tuple[int, ...]:
    """Configured default resolution for dimension d, as a per-axis tuple."""
    settings = get_settings()
    defaults = {1: settings.DEFAULT_RESOLUTION_1D, 2: settings.DEFAULT_RESOLUTION_2D, 3: settings.DEFAULT_RESOLUTION_3D}
    if d not in defaults:
        raise PreconditionError(f"grids are supported for d <= 3, got d={d}")
    n = override or defaults[d]
    if not is_power_of_two(n):
        raise PreconditionError(f"grid resolution must be a power of two, got {n}")
    if n**d > settings.MAX_GRID_NODES:
        raise PreconditionError(f"grid with {n}^{d} nodes exceeds MAX_GRID_NODES")
    return (n,) * d


def discretize(dist: GaussianMixture, box, resolution: Union[int, Sequence[int]]) -> GridDensity:
    """
    Sample the mixture density on a box grid and renormalize to unit mass.

    Raises:
        PrecisionError: the box leaves more than MASS_TOLERANCE outside, or the
            grid is too coarse for the Riemann mass to be within tolerance.
    """
    settings = get_settings()
    box = _as_box(box, dist.d)
    resolution = (resolution,) * dist.d if isinstance(resolution, (int, np.integer)) else tuple(resolution)
    if len(resolution) != dist.d:
        raise PreconditionError("resolution must give one node count per axis")

    defect = mass_outside(dist, box)
    if defect > settings.MASS_TOLERANCE:
        raise PrecisionError(f"box leaves mass {defect:.4g} outside", defect=defect)
    if defect > settings.MASS_WARN_TOLERANCE:
        logger.warning("discretize: mass defect %.3g above %.1g", defect, settings.MASS_WARN_TOLERANCE)

    grid = GridDensity(box[:, 0], box[:, 1], np.zeros(resolution))
    values = density_values(dist, grid.coordinates().reshape(-1, dist.d)).reshape(resolution)
    raw_mass = float(values.sum() * grid.cell_volume)
    if abs(raw_mass - 1.0) > settings.MASS_TOLERANCE + defect:
        raise PrecisionError(f"grid too coarse: Riemann mass {raw_mass:.10f}", defect=abs(raw_mass - 1.0))
    logger.debug("discretize: d=%d resolution=%s defect=%.3g raw_mass=%.12f", dist.d, resolution, defect, raw_mass)
    return GridDensity(box[:, 0], box[:, 1], values / raw_mass, mass_defect=defect, raw_mass=raw_mass)


# ============================================================================
# Atoms
# ============================================================================

def sample(dist: GaussianMixture, n: int, seed) -> AtomSet:
    """n i.i.d. draws with equal masses; deterministic given the seed."""
    if n < 1:
        raise PreconditionError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    components = rng.choice(dist.n_components, size=n, p=dist.weights)
    z = rng.standard_normal((n, dist.d))
    locations = dist.means[components] + np.einsum("nij,nj->ni", dist.cholesky[components], z)
    return AtomSet.uniform(locations)


def quantile_atoms(dist: GaussianMixture, n: int) -> AtomSet:
    """n equal-mass atoms at the midpoint quantiles (i + 1/2)/n of a 1-D law."""
    _require_1d(dist, "quantile_atoms")
    return AtomSet.uniform(np.array([quantile_1d(dist, (i + 0.5) / n) for i in range(n)]))


def grid_to_atoms(grid: GridDensity, per_axis: Optional[int] = None) -> AtomSet:
    """Aggregate grid cells into per_axis^d blocks, one atom per block at its centroid."""
    per_axis = per_axis or get_settings().OT_ATOMS_PER_AXIS
    if any(n % per_axis for n in grid.resolution):
        raise PreconditionError(f"{per_axis} blocks per axis do not divide resolution {grid.resolution}")
    d = grid.d
    block = tuple(n // per_axis for n in grid.resolution)
    shape = sum(((per_axis, b) for b in block), ())
    inner = tuple(range(1, 2 * d, 2))
    cell_mass = grid.values * grid.cell_volume
    mass = cell_mass.reshape(shape).sum(axis=inner)
    coords = grid.coordinates()
    centroid = np.stack(
        [(cell_mass * coords[..., k]).reshape(shape).sum(axis=inner) for k in range(d)], axis=-1
    )
    keep = mass > mass.max() * 1e-15
    return AtomSet(centroid[keep] / mass[keep][:, None], mass[keep] / mass[keep].sum())


# ============================================================================
# JSON
# ============================================================================

def mixture_from_json(text: str) -> GaussianMixture:
    return GaussianMixture.from_spec(MixtureSpec.model_validate_json(text))


def mixture_to_json(dist: GaussianMixture) -> str:
    return dist.to_spec().model_dump_json(indent=2)


def law_from_json(text: str) -> Union[GaussianMixture, AtomSet]:
    """Read a mixture document or an atom-set document."""
    document = json.loads(text)
    if "components" in document:
        return GaussianMixture.from_spec(MixtureSpec.model_validate(document))
    if "atoms" in document:
        return AtomSet.from_spec(AtomSetSpec.model_validate(document))
    raise PreconditionError("document is neither a mixture (components) nor an atom set (atoms)")
