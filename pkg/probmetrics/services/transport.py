"""Distances between laws: weighted total variation and Wasserstein."""
import logging
import math
from typing import Optional, Tuple, Union

import numpy as np
import ot
from scipy import integrate, linalg, optimize
from scipy.spatial.distance import cdist

from probmetrics.config import get_settings
from probmetrics.exceptions import (
    ConvergenceError,
    NumericalError,
    PreconditionError,
    SizeLimitError,
    UnresolvableGridError,
)
from probmetrics.models import AtomSet, DistanceMethod, GaussianMixture, GridDensity, TransportPlan
from probmetrics.schemas import DistanceResult
from probmetrics.services import distributions

logger = logging.getLogger(__name__)

Law = Union[GaussianMixture, GridDensity]

MIXTURE_OT_EXACT = 1e-9


def _check_dimensions(a, b) -> None:
    if a.d != b.d:
        raise PreconditionError(f"laws differ in dimension ({a.d} vs {b.d})")


# ============================================================================
# Weighted total variation
# ============================================================================

def _weight(coords: np.ndarray, p: float) -> np.ndarray:
    """V_p(x) = 1 + |x|^p, and the plain weight 1 for p = 0."""
    if p == 0:
        return np.ones(coords.shape[:-1])
    return 1.0 + np.linalg.norm(coords, axis=-1) ** p


def _weighted_l1(grid_a: GridDensity, grid_b: GridDensity, p: float) -> float:
    weight = _weight(grid_a.coordinates(), p)
    return float(np.sum(weight * np.abs(grid_a.values - grid_b.values)) * grid_a.cell_volume)


def _on_grid(dist: GaussianMixture, like: GridDensity) -> GridDensity:
    return distributions.discretize(dist, np.stack([like.lower, like.upper], axis=1), like.resolution)


def rho_p(a: Law, b: Law, p: float, tol: Optional[float] = None, resolution: Optional[int] = None) -> DistanceResult:
    """
    Weighted total variation int (1 + |x|^p) |f_a - f_b| dx by grid quadrature.

    Mixtures are discretized on their common box and refined by doubling the
    resolution until two consecutive levels agree within ``tol``. Grid inputs
    are compared against their 2x-coarsened version instead.

    Args:
        a: mixture or grid density
        b: mixture or grid density of the same dimension
        p: weight power, p >= 0
        tol: admissible error estimate (default RHO_TOLERANCE)
        resolution: starting per-axis resolution for mixtures

    Returns:
        DistanceResult with method grid-quadrature.

    Raises:
        UnresolvableGridError: the error estimate stays above ``tol``.
    """
    if p < 0 or not math.isfinite(p):
        raise PreconditionError(f"weight power must be finite and >= 0, got {p}")
    if not all(isinstance(law, (GaussianMixture, GridDensity)) for law in (a, b)):
        raise PreconditionError("rho_p needs densities: mixtures or grid densities")
    _check_dimensions(a, b)
    settings = get_settings()
    tol = settings.RHO_TOLERANCE if tol is None else tol

    if isinstance(a, GridDensity) or isinstance(b, GridDensity):
        grid_a = a if isinstance(a, GridDensity) else _on_grid(a, b)
        grid_b = b if isinstance(b, GridDensity) else _on_grid(b, a)
        if not grid_a.same_layout(grid_b):
            raise PreconditionError("grid densities do not share box and resolution")
        value = _weighted_l1(grid_a, grid_b, p)
        err = abs(value - _weighted_l1(grid_a.coarsened(), grid_b.coarsened(), p))
        if err > tol:
            raise UnresolvableGridError(f"rho_p error estimate {err:.3g} above {tol:.3g}", defect=err)
        return DistanceResult(value=value, method=DistanceMethod.GRID_QUADRATURE, err=err)

    box = distributions.common_box(a, b)
    n = distributions.grid_resolution(a.d, resolution)[0]
    previous = _weighted_l1(distributions.discretize(a, box, n), distributions.discretize(b, box, n), p)
    err = math.inf
    for _ in range(settings.RHO_MAX_REFINEMENTS):
        n *= 2
        if n**a.d > settings.MAX_GRID_NODES:
            break
        value = _weighted_l1(distributions.discretize(a, box, n), distributions.discretize(b, box, n), p)
        err = abs(value - previous)
        logger.debug("rho_p: p=%s n=%d value=%.10f err=%.3g", p, n, value, err)
        if err < tol:
            return DistanceResult(value=value, method=DistanceMethod.GRID_QUADRATURE, err=err)
        previous = value
    raise UnresolvableGridError(f"rho_p did not settle below {tol:.3g} (last estimate {err:.3g})", defect=err)


def tv_mass(a: Law, b: Law, **kwargs) -> DistanceResult:
    """Total variation mass int |f_a - f_b| dx."""
    return rho_p(a, b, 0.0, **kwargs)


# ============================================================================
# One-dimensional Wasserstein
# ============================================================================

def _quantile_distance(a: GaussianMixture, b: GaussianMixture, q: float, order: int) -> float:
    # u = Phi(t) turns int_0^1 g(F^{-1}(u)) du into a Gaussian expectation
    t, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / math.sqrt(2 * math.pi)
    gaps = np.array([abs(distributions.quantile_1d_tail(a, x) - distributions.quantile_1d_tail(b, x)) for x in t])
    return float(np.dot(w, gaps**q)) ** (1.0 / q)


def wasserstein_1d(a: GaussianMixture, b: GaussianMixture, q: float, order: Optional[int] = None) -> DistanceResult:
    """
    W_q between two 1-D mixtures through the quantile representation.

    The error estimate is the change when the Gauss-Hermite order doubles;
    the reported value is the higher-order one.
    """
    if not q > 1:
        raise PreconditionError(f"wasserstein_1d needs q > 1, got {q}")
    if a.d != 1 or b.d != 1:
        raise PreconditionError("wasserstein_1d is only defined for d = 1")
    order = order or get_settings().GH_ORDER
    coarse = _quantile_distance(a, b, q, order)
    fine = _quantile_distance(a, b, q, 2 * order)
    logger.debug("wasserstein_1d: q=%s order=%d value=%.12g err=%.3g", q, 2 * order, fine, abs(fine - coarse))
    return DistanceResult(value=fine, method=DistanceMethod.QUANTILE_QUADRATURE, err=abs(fine - coarse))


# ============================================================================
# Discrete optimal transport
# ============================================================================

def _cost_matrix(a: AtomSet, b: AtomSet, q: float) -> np.ndarray:
    return cdist(a.locations, b.locations) ** q


def _check_atoms(a: AtomSet, b: AtomSet) -> None:
    _check_dimensions(a, b)
    limit = get_settings().OT_MAX_CELLS
    cells = len(a) * len(b)
    if cells > limit:
        raise SizeLimitError(cells, limit)


def _round_to_polytope(plan: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Project an approximate plan onto the couplings of (rows, cols)."""
    plan = plan * np.minimum(rows / np.maximum(plan.sum(axis=1), 1e-300), 1.0)[:, None]
    plan = plan * np.minimum(cols / np.maximum(plan.sum(axis=0), 1e-300), 1.0)[None, :]
    missing_rows = rows - plan.sum(axis=1)
    missing_cols = cols - plan.sum(axis=0)
    deficit = missing_rows.sum()
    if deficit > 0:
        plan = plan + np.outer(missing_rows, missing_cols) / deficit
    return plan


def _network_simplex(rows: np.ndarray, cols: np.ndarray, cost: np.ndarray) -> Tuple[np.ndarray, float]:
    """Exact plan between (rows, cols) and the value of the dual certificate."""
    rows = rows / rows.sum()
    cols = cols / cols.sum()
    matrix, log = ot.emd(rows, cols, cost, numItermax=get_settings().OT_MAX_ITER, log=True)
    if log["result_code"] != 1:
        raise NumericalError(f"network simplex stopped early: {log['warning']}")
    dual = float(np.dot(rows, log["u"]) + np.dot(cols, log["v"]))
    return matrix, dual


def ot_exact(a: AtomSet, b: AtomSet, q: float = 2.0) -> Tuple[DistanceResult, TransportPlan]:
    """
    Exact optimal transport for the cost |x - y|^q.

    Two sets of equal size whose masses are all identical are solved as an
    assignment problem; everything else goes to the network simplex, whose
    plan is projected back onto the exact marginals.

    Raises:
        SizeLimitError: n_a * n_b exceeds OT_MAX_CELLS.
        NumericalError: the network simplex hit its iteration limit.
    """
    if q < 1:
        raise PreconditionError(f"ot_exact needs q >= 1, got {q}")
    _check_atoms(a, b)
    cost = _cost_matrix(a, b, q)
    n_a, n_b = cost.shape

    uniform = n_a == n_b and np.all(a.masses == a.masses[0]) and np.all(b.masses == b.masses[0])
    if uniform:
        rows, cols = optimize.linear_sum_assignment(cost)
        matrix = np.zeros_like(cost)
        matrix[rows, cols] = a.masses[rows]
        gap = 0.0
    else:
        matrix, dual = _network_simplex(a.masses, b.masses, cost)
        matrix = _round_to_polytope(matrix, a.masses, b.masses)
        gap = abs(float(np.sum(matrix * cost)) - dual)

    plan = TransportPlan(a, b, matrix)
    total = max(plan.cost(cost), 0.0)
    logger.debug("ot_exact: %dx%d q=%s cost=%.12g", n_a, n_b, q, total)
    result = DistanceResult(value=total ** (1.0 / q), method=DistanceMethod.EXACT_OT, err=gap ** (1.0 / q))
    return result, plan


def _sinkhorn_schedule(cost: np.ndarray) -> np.ndarray:
    settings = get_settings()
    positive = cost[cost > 0]
    final = settings.SINKHORN_EPS_RATIO * float(np.median(positive))
    schedule = [float(cost.max())]
    while schedule[-1] * settings.SINKHORN_ANNEAL_FACTOR > final:
        schedule.append(schedule[-1] * settings.SINKHORN_ANNEAL_FACTOR)
    schedule.append(final)
    return np.array(schedule)


def ot_entropic(a: AtomSet, b: AtomSet, q: float = 2.0, reg_schedule=None) -> DistanceResult:
    """
    Stabilized Sinkhorn with annealed regularization.

    Each stage is warm-started from the dual potentials of the previous one.
    The value is the cost of the plan rounded onto the transport polytope, so
    it never undercuts the exact optimum; err is the gap to the c-transformed
    dual bound, in W_q units.

    Raises:
        ConvergenceError: marginal violation above SINKHORN_TOLERANCE at the end.
    """
    if q < 1:
        raise PreconditionError(f"ot_entropic needs q >= 1, got {q}")
    _check_atoms(a, b)
    settings = get_settings()
    cost = _cost_matrix(a, b, q)
    if cost.max() == 0:
        return DistanceResult(value=0.0, method=DistanceMethod.ENTROPIC_OT, err=0.0)
    schedule = _sinkhorn_schedule(cost) if reg_schedule is None else np.asarray(reg_schedule, dtype=float)
    if schedule.size == 0 or np.any(schedule <= 0) or np.any(np.diff(schedule) > 0):
        raise PreconditionError("regularization schedule must be positive and non-increasing")

    f = np.zeros(len(a))
    g = np.zeros(len(b))
    iterations = 0
    for eps in schedule:
        plan, log = ot.bregman.sinkhorn_stabilized(
            a.masses,
            b.masses,
            cost,
            float(eps),
            numItermax=settings.SINKHORN_MAX_ITER,
            stopThr=settings.SINKHORN_STOP,
            warmstart=(f, g),
            log=True,
            warn=False,
        )
        f, g = log["alpha"], log["beta"]
        iterations += log.get("n_iter", 0) + 1
    violation = float(np.abs(plan.sum(axis=1) - a.masses).sum() + np.abs(plan.sum(axis=0) - b.masses).sum())
    if not violation <= settings.SINKHORN_TOLERANCE:
        raise ConvergenceError(
            f"Sinkhorn marginal violation {violation:.3g} after {iterations} iterations at eps={schedule[-1]:.3g}"
        )

    plan = _round_to_polytope(plan, a.masses, b.masses)
    primal = max(float(np.sum(plan * cost)), 0.0)
    g_transform = np.min(cost - f[:, None], axis=0)
    dual = float(np.dot(a.masses, f) + np.dot(b.masses, g_transform))
    value = primal ** (1.0 / q)
    err = max(value - max(dual, 0.0) ** (1.0 / q), 0.0)
    logger.debug("ot_entropic: %d iterations, value=%.10g gap=%.3g", iterations, value, err)
    return DistanceResult(value=value, method=DistanceMethod.ENTROPIC_OT, err=err)


# ============================================================================
# Mixtures in d >= 2
# ============================================================================

def _moments(dist: GaussianMixture) -> Tuple[np.ndarray, np.ndarray]:
    mean = dist.weights @ dist.means
    second = np.einsum("j,jkl->kl", dist.weights, dist.covs + np.einsum("jk,jl->jkl", dist.means, dist.means))
    return mean, second - np.outer(mean, mean)


def _gaussian_w2(mean_a, cov_a, mean_b, cov_b) -> float:
    """Closed-form W_2 between two Gaussians."""
    root = linalg.sqrtm(cov_b).real
    cross = linalg.sqrtm(root @ cov_a @ root).real
    squared = float(np.sum((mean_a - mean_b) ** 2) + np.trace(cov_a + cov_b - 2.0 * cross))
    return math.sqrt(max(squared, 0.0))


def _linear_coupling_cost(mean_a, cov_a, chol_a, mean_b, cov_b, q, nodes, weights) -> float:
    """E |X - T X|^q where T is the linear map pushing N(mean_a, cov_a) onto N(mean_b, cov_b)."""
    delta = mean_b - mean_a
    if np.array_equal(cov_a, cov_b):
        return float(np.linalg.norm(delta)) ** q
    root = linalg.sqrtm(cov_a).real
    inv_root = np.linalg.inv(root)
    transform = inv_root @ linalg.sqrtm(root @ cov_b @ root).real @ inv_root
    shear = (transform - np.eye(delta.size)) @ chol_a
    return float(weights @ np.linalg.norm(delta + nodes @ shear.T, axis=1) ** q)


def mixture_ot(a: GaussianMixture, b: GaussianMixture, q: float = 2.0) -> DistanceResult:
    """
    Upper bound on W_q from an optimal coupling of the mixture components.

    Component pairs are joined by the linear map pushing one Gaussian onto the
    other, which is W_q-optimal for q = 2 and for translates, and the component
    weights are coupled by exact OT. err is the distance to a lower bound: the
    Gaussian W_2 between the moment-matched laws when q >= 2, the distance
    between the means otherwise.
    """
    if q < 1:
        raise PreconditionError(f"mixture_ot needs q >= 1, got {q}")
    _check_dimensions(a, b)
    settings = get_settings()
    order = max(2, min(settings.GH_ORDER, int(settings.MIXTURE_OT_NODES ** (1.0 / a.d))))
    nodes, weights = distributions.gauss_hermite_nodes(a.d, order)
    cost = np.array([
        [
            _linear_coupling_cost(mean_a, cov_a, chol_a, mean_b, cov_b, q, nodes, weights)
            for mean_b, cov_b in zip(b.means, b.covs)
        ]
        for mean_a, cov_a, chol_a in zip(a.means, a.covs, a.cholesky)
    ])
    matrix, _ = _network_simplex(a.weights, b.weights, cost)
    value = max(float(np.sum(matrix * cost)), 0.0) ** (1.0 / q)

    mean_a, cov_a = _moments(a)
    mean_b, cov_b = _moments(b)
    lower = _gaussian_w2(mean_a, cov_a, mean_b, cov_b) if q >= 2 else float(np.linalg.norm(mean_a - mean_b))
    err = max(value - lower, 0.0)
    logger.debug("mixture_ot: %dx%d components q=%s value=%.12g err=%.3g", *cost.shape, q, value, err)
    return DistanceResult(value=value, method=DistanceMethod.MIXTURE_OT, err=err)


def _quantized_atoms(a: GaussianMixture, b: GaussianMixture) -> Tuple[AtomSet, AtomSet, float]:
    """Both laws aggregated into blocks of their common grid, and the block diagonal."""
    settings = get_settings()
    box = distributions.common_box(a, b)
    n = distributions.grid_resolution(a.d)
    per_axis = settings.OT_ATOMS_PER_AXIS
    while per_axis > 2 and per_axis ** (2 * a.d) > settings.OT_MAX_CELLS:
        per_axis //= 2
    grid_a = distributions.discretize(a, box, n)
    grid_b = distributions.discretize(b, box, n)
    block = grid_a.spacing * (np.asarray(grid_a.resolution) // per_axis)
    return (
        distributions.grid_to_atoms(grid_a, per_axis),
        distributions.grid_to_atoms(grid_b, per_axis),
        float(np.linalg.norm(block)),
    )


def wasserstein_grid(a: GaussianMixture, b: GaussianMixture, q: float) -> DistanceResult:
    """
    Exact OT between block quantizations of two mixtures on their common grid.

    Each atom lies in the block whose mass it carries, so quantizing moves
    either law by at most one block diagonal; err adds both to the solver gap.
    """
    _check_dimensions(a, b)
    atoms_a, atoms_b, diagonal = _quantized_atoms(a, b)
    result = ot_exact(atoms_a, atoms_b, q)[0]
    logger.debug("wasserstein_grid: %d x %d atoms, block diagonal %.4g", len(atoms_a), len(atoms_b), diagonal)
    return result.model_copy(update={"err": result.err + 2.0 * diagonal})


# ============================================================================
# Dispatch
# ============================================================================

def wasserstein(a, b, q: float) -> DistanceResult:
    """
    W_q by the best method for the input types.

    1-D mixtures use the quantile quadrature and atom sets exact OT. Mixtures
    in d >= 2 use the component coupling bound, which is exact for translates;
    when it is not, the block-quantized exact OT is computed as well and the
    result with the smaller error estimate is returned.
    """
    _check_dimensions(a, b)
    if isinstance(a, AtomSet) and isinstance(b, AtomSet):
        return ot_exact(a, b, q)[0]
    if isinstance(a, GaussianMixture) and isinstance(b, GaussianMixture):
        if a.d == 1:
            return wasserstein_1d(a, b, q)
        bound = mixture_ot(a, b, q)
        if bound.err <= MIXTURE_OT_EXACT * max(bound.value, 1.0):
            return bound
        grid = wasserstein_grid(a, b, q)
        return grid if grid.err < bound.err else bound
    raise PreconditionError("wasserstein needs two mixtures or two atom sets")


def _cdf_l1(a: GaussianMixture, b: GaussianMixture) -> Tuple[float, float]:
    """W_1 = int |F_a - F_b| dx for 1-D mixtures."""
    box = distributions.common_box(a, b)[0]
    breaks = np.unique(np.concatenate([a.means[:, 0], b.means[:, 0]]))
    breaks = breaks[(breaks > box[0]) & (breaks < box[1])]
    value, err = integrate.quad(
        lambda x: abs(float(distributions.cdf_1d(a, x)) - float(distributions.cdf_1d(b, x))),
        box[0],
        box[1],
        points=breaks if breaks.size else None,
        limit=200,
    )
    return value, err


def fm_upper(a, b) -> DistanceResult:
    """Certified upper bound min(2, W_1) on the Fortet-Mourier distance."""
    _check_dimensions(a, b)
    if isinstance(a, GaussianMixture) and isinstance(b, GaussianMixture) and a.d == 1:
        value, err = _cdf_l1(a, b)
        method = DistanceMethod.CDF_QUADRATURE
    elif isinstance(a, AtomSet) and isinstance(b, AtomSet):
        exact = ot_exact(a, b, 1.0)[0]
        value, err, method = exact.value, exact.err, exact.method
    elif isinstance(a, GaussianMixture) and isinstance(b, GaussianMixture):
        bound = mixture_ot(a, b, 1.0)
        value, err, method = bound.value, bound.err, bound.method
    else:
        raise PreconditionError("fm_upper needs two mixtures or two atom sets")
    if value >= 2.0:
        return DistanceResult(value=2.0, method=method, err=0.0)
    return DistanceResult(value=value, method=method, err=err)
