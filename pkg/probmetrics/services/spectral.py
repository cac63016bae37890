"""Characteristic functions, grid Fourier transforms and decay envelopes.

Sign convention: f_hat(u) = int f(x) exp(-i<u,x>) dx and the characteristic
function is phi(u) = f_hat(-u) = int f(x) exp(+i<u,x>) dx, so that
f(x) = (2 pi)^{-d} int phi(u) exp(-i<u,x>) du.
"""
import itertools
import logging
import math
from typing import Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy import fft, special

from probmetrics.config import get_settings
from probmetrics.exceptions import (
    NonExponentialTailError,
    PrecisionError,
    PreconditionError,
    UnstableDifferentiationError,
)
from probmetrics.models import CharGrid, EnvelopeSide, GaussianMixture, GridDensity, as_point, as_points
from probmetrics.schemas import ExpEnvelopeEntry, ExpEnvelopeTable, PolyEnvelopeEntry, PolyEnvelopeTable
from probmetrics.services import distributions

logger = logging.getLogger(__name__)

_FLAT_SLOPE = -1e-10


# ============================================================================
# Analytic characteristic functions
# ============================================================================

def char_fn_values(dist: GaussianMixture, points) -> np.ndarray:
    """sum_j w_j exp(i<u, m_j> - u^T S_j u / 2) for a batch of frequencies."""
    u = as_points(points, dist.d)
    quad = np.einsum("ni,mij,nj->nm", u, dist.covs, u)
    return np.exp(1j * u @ dist.means.T - 0.5 * quad) @ dist.weights


def char_fn_analytic(dist: GaussianMixture, u) -> complex:
    return complex(char_fn_values(dist, as_point(u, dist.d)[None, :])[0])


# ============================================================================
# Grid transforms
# ============================================================================

def _phase(lower: np.ndarray, upper: np.ndarray, shape: Tuple[int, ...], sign: int) -> np.ndarray:
    """prod_k exp(sign * i * u_k * a_k) on the dual frequency grid."""
    total = np.ones(shape, dtype=complex)
    for k, (a, b, n) in enumerate(zip(lower, upper, shape)):
        u = (np.arange(n) - n // 2) * 2 * np.pi / (b - a)
        view = [1] * len(shape)
        view[k] = n
        total = total * np.exp(sign * 1j * u * a).reshape(view)
    return total


def _to_frequency(values: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    # phi(u_j) = cellvol * e^{i<u_j, a>} * sum_k f_k e^{2 pi i (j - n/2) k / n}
    shape = values.shape
    cell = float(np.prod((upper - lower) / np.array(shape)))
    spectrum = fft.fftshift(fft.ifftn(values)) * (np.prod(shape) * cell)
    return spectrum * _phase(lower, upper, shape, +1)


def _to_space(values: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    shape = values.shape
    cell = float(np.prod((upper - lower) / np.array(shape)))
    shifted = fft.ifftshift(values * _phase(lower, upper, shape, -1) / cell)
    return fft.fftn(shifted) / np.prod(shape)


def char_fn_grid(f: GridDensity) -> CharGrid:
    """Characteristic function of a unit-mass grid density on the dual grid."""
    if abs(f.mass - 1.0) > 1e-9:
        raise PreconditionError(f"grid mass is {f.mass!r}, expected 1")
    return CharGrid(f.lower, f.upper, _to_frequency(f.values, f.lower, f.upper), is_char_fn=True)


def inverse_char_grid(g: CharGrid) -> np.ndarray:
    """Real spatial values whose grid transform is ``g``."""
    return _to_space(g.values, g.lower, g.upper).real


def _grid_of(obj: Union[GaussianMixture, GridDensity], resolution: Optional[int] = None) -> GridDensity:
    if isinstance(obj, GridDensity):
        return obj
    box = distributions.common_box(obj, obj)
    return distributions.discretize(obj, box, distributions.grid_resolution(obj.d, resolution))


def pair_grids(a, b, resolution: Optional[int] = None) -> Tuple[GridDensity, GridDensity]:
    """Two grid densities on one shared layout."""
    if isinstance(a, GridDensity) and isinstance(b, GridDensity):
        if not a.same_layout(b):
            raise PreconditionError("grid densities do not share box and resolution")
        return a, b
    if isinstance(a, GaussianMixture) and isinstance(b, GaussianMixture):
        box = distributions.common_box(a, b)
        n = distributions.grid_resolution(a.d, resolution)
        return distributions.discretize(a, box, n), distributions.discretize(b, box, n)
    raise PreconditionError("pass two mixtures or two grid densities")


def _power_sum(coords: np.ndarray, p: int) -> np.ndarray:
    return np.sum(coords**p, axis=-1)


def _require_even(p: int) -> int:
    if float(p) != int(p) or int(p) < 2 or int(p) % 2:
        raise PreconditionError(f"p must be an even integer >= 2, got {p}")
    return int(p)


def delta_p_char(obj: Union[GaussianMixture, GridDensity], p: int, resolution: Optional[int] = None) -> CharGrid:
    """
    Grid of Delta_p phi(u) = i^p sum_j int x_j^p f(x) e^{i<u,x>} dx.

    Args:
        obj: a mixture (discretized on its default box) or a grid density
        p: even order >= 2
        resolution: per-axis node count when obj is a mixture

    Returns:
        CharGrid flagged as not being a characteristic function.
    """
    p = _require_even(p)
    grid = _grid_of(obj, resolution)
    weighted = grid.values * _power_sum(grid.coordinates(), p)
    values = (1j**p) * _to_frequency(weighted, grid.lower, grid.upper)
    return CharGrid(grid.lower, grid.upper, values, is_char_fn=False)


def weighted_diff_reconstruct(a, b, p: int, resolution: Optional[int] = None) -> np.ndarray:
    """(f_a - f_b) * sum_j x_j^p recovered from Delta_p(phi_a - phi_b)."""
    p = _require_even(p)
    grid_a, grid_b = pair_grids(a, b, resolution)
    delta = delta_p_char(grid_a, p).values - delta_p_char(grid_b, p).values
    return ((-1j) ** p * _to_space(delta, grid_a.lower, grid_a.upper)).real


# ============================================================================
# Spectral differentiation
# ============================================================================

def multiindices(d: int, k: int) -> Iterator[Tuple[int, ...]]:
    """All multiindices alpha in N^d with |alpha| = k."""
    for combo in itertools.combinations_with_replacement(range(d), k):
        yield tuple(combo.count(j) for j in range(d))


class _Differentiator:
    """Noise-filtered spectrum of one grid function, differentiated by multiplication."""

    def __init__(self, values: np.ndarray, lower: np.ndarray, upper: np.ndarray, frequency_side: bool):
        self.lower = lower
        self.upper = upper
        self.frequency_side = frequency_side
        floor = get_settings().ENVELOPE_NOISE_FLOOR
        if frequency_side:
            # the spectrum of phi lives on the spatial nodes
            spectrum = _to_space(values, lower, upper)
            n = values.shape
            h = (upper - lower) / np.array(n)
            self.dual = [lo + step * np.arange(m) for lo, step, m in zip(lower, h, n)]
            centre = (lower + upper) / 2
            half = (upper - lower) / 2
            self.outer = self._outer_mask([ax - c for ax, c in zip(self.dual, centre)], half)
        else:
            spectrum = _to_frequency(values, lower, upper)
            n = values.shape
            self.dual = [(np.arange(m) - m // 2) * 2 * np.pi / (b - a) for a, b, m in zip(lower, upper, n)]
            half = np.array([np.pi * m / (b - a) for a, b, m in zip(lower, upper, n)])
            self.outer = self._outer_mask(self.dual, half)
        magnitude = np.abs(spectrum)
        self.spectrum = np.where(magnitude >= floor * magnitude.max(), spectrum, 0.0)

    @staticmethod
    def _outer_mask(axes: List[np.ndarray], half: np.ndarray) -> np.ndarray:
        mask = np.zeros(tuple(len(ax) for ax in axes), dtype=bool)
        for k, (ax, w) in enumerate(zip(axes, half)):
            view = [1] * len(axes)
            view[k] = len(ax)
            mask = mask | (np.abs(ax) >= 0.9 * w).reshape(view)
        return mask

    def _radius(self) -> np.ndarray:
        mesh = np.meshgrid(*self.dual, indexing="ij")
        return np.sqrt(sum(m * m for m in mesh))

    def check_resolved(self, order: int) -> None:
        """Spectral content of the order-``order`` derivative must vanish near the band edge."""
        weighted = np.abs(self.spectrum) * (1 + self._radius()) ** order
        peak = weighted.max()
        edge = weighted[self.outer].max() if self.outer.any() else 0.0
        if peak > 0 and edge > get_settings().NYQUIST_TOLERANCE * peak:
            raise UnstableDifferentiationError(
                f"order {order} derivative not resolved: band-edge content {edge / peak:.3g} of peak"
            )

    def derivative(self, alpha: Tuple[int, ...]) -> np.ndarray:
        factor = np.ones(self.spectrum.shape, dtype=complex)
        for k, (ax, a_k) in enumerate(zip(self.dual, alpha)):
            if a_k == 0:
                continue
            view = [1] * len(self.dual)
            view[k] = len(ax)
            # d/du phi <-> i x f,  d/dx f <-> -i u phi
            unit = 1j * ax if self.frequency_side else -1j * ax
            factor = factor * (unit**a_k).reshape(view)
        if self.frequency_side:
            return _to_frequency(self.spectrum * factor, self.lower, self.upper)
        return _to_space(self.spectrum * factor, self.lower, self.upper).real


def _differentiator(obj: Union[GridDensity, CharGrid]) -> _Differentiator:
    if isinstance(obj, CharGrid):
        return _Differentiator(obj.values, obj.lower, obj.upper, frequency_side=True)
    if isinstance(obj, GridDensity):
        return _Differentiator(obj.values, obj.lower, obj.upper, frequency_side=False)
    raise PreconditionError(f"cannot differentiate a {type(obj).__name__}")


def spectral_derivative(obj: Union[GridDensity, CharGrid], alpha) -> np.ndarray:
    """d^alpha of a grid density (real result) or of a frequency grid (complex result)."""
    alpha = tuple(int(a) for a in np.atleast_1d(alpha))
    if len(alpha) != obj.d or min(alpha) < 0:
        raise PreconditionError(f"alpha must be a multiindex of length {obj.d}")
    if sum(alpha) == 0:
        return np.array(obj.values)
    engine = _differentiator(obj)
    engine.check_resolved(sum(alpha))
    return engine.derivative(alpha)


def signed_derivative(values: np.ndarray, lower: np.ndarray, upper: np.ndarray, alpha) -> np.ndarray:
    """d^alpha of a signed real array on a box grid."""
    alpha = tuple(int(a) for a in alpha)
    if sum(alpha) == 0:
        return np.array(values, dtype=float)
    engine = _Differentiator(values, lower, upper, frequency_side=False)
    engine.check_resolved(sum(alpha))
    return engine.derivative(alpha)


# ============================================================================
# Envelopes
# ============================================================================

def _coordinates(obj: Union[GridDensity, CharGrid]) -> np.ndarray:
    return np.linalg.norm(obj.coordinates(), axis=-1)


def _order_magnitudes(obj, K: int, pure_only: bool = False) -> List[np.ndarray]:
    """max over |alpha| = k of |d^alpha g| for k = 0..K."""
    engine = _differentiator(obj)
    engine.check_resolved(K)
    magnitudes = [np.abs(obj.values)]
    for k in range(1, K + 1):
        if pure_only:
            alphas = [tuple(k if j == i else 0 for j in range(obj.d)) for i in range(obj.d)]
        else:
            alphas = list(multiindices(obj.d, k))
        magnitudes.append(np.max([np.abs(engine.derivative(a)) for a in alphas], axis=0))
    return magnitudes


def poly_envelope(obj: Union[GridDensity, CharGrid], K: int, L: int) -> PolyEnvelopeTable:
    """
    Empirical polynomial envelope: max over nodes of |d^alpha g|(1+|x|)^l, |alpha| = k.

    A GridDensity yields the density-side table d_{k,l}, a CharGrid the
    frequency-side table b_{k,l}. Nodes below the noise floor are ignored.
    """
    if K < 0 or L < 0:
        raise PreconditionError("K and L must be nonnegative")
    side = EnvelopeSide.FREQUENCY if isinstance(obj, CharGrid) else EnvelopeSide.DENSITY
    floor = get_settings().ENVELOPE_NOISE_FLOOR
    log_weight = np.log1p(_coordinates(obj))
    entries = []
    for k, magnitude in enumerate(_order_magnitudes(obj, K)):
        peak = magnitude.max()
        mask = magnitude >= floor * peak
        log_mag = np.log(magnitude[mask]) if peak > 0 else None
        for l in range(L + 1):
            c = 0.0 if log_mag is None else float(np.exp(np.max(log_mag + l * log_weight[mask])))
            if not math.isfinite(c):
                raise PrecisionError(f"envelope entry k={k}, l={l} overflows")
            entries.append(PolyEnvelopeEntry(k=k, l=l, c=c))
    logger.debug("poly_envelope: side=%s K=%d L=%d", side.value, K, L)
    return PolyEnvelopeTable(side=side, entries=entries)


def pair_poly_envelope(a, b, K: int, L: int) -> PolyEnvelopeTable:
    """Entrywise maximum of the two tables, so the entry bounds each law separately."""
    if type(a) is not type(b) or not a.same_layout(b):
        raise PreconditionError("envelope pair must share grid type, box and resolution")
    table_a = poly_envelope(a, K, L)
    table_b = poly_envelope(b, K, L)
    entries = [
        PolyEnvelopeEntry(k=ea.k, l=ea.l, c=max(ea.c, eb.c)) for ea, eb in zip(table_a.entries, table_b.entries)
    ]
    return PolyEnvelopeTable(side=table_a.side, entries=entries)


def _tail_remainder(log_scale: float, rate: float, radius: float, d: int) -> float:
    """int_{|u| > radius} exp(log_scale - rate |u|) du in R^d."""
    sphere = 2 * math.pi ** (d / 2) / special.gamma(d / 2)
    upper_gamma = special.gammaincc(d, rate * radius) * special.gamma(d)
    return sphere * math.exp(log_scale) * upper_gamma / rate**d


def exp_envelope(
    grid: CharGrid, K: int, r: Optional[Union[float, Mapping[int, float]]] = None
) -> ExpEnvelopeTable:
    """
    Exponential envelope (r_k, c_k) of the pure partials of a frequency grid.

    For each order k the tail of log max_j |d_j^k phi| is fitted against |u| on
    the outer band of the resolved radius; r_k is half the fitted decay rate
    (or the caller's r) and c_k integrates |d^k phi| e^{r_k |u|} over the grid
    plus the fitted tail beyond the resolved radius.

    Raises:
        NonExponentialTailError: the fitted slope is not negative.
    """
    if not isinstance(grid, CharGrid):
        raise PreconditionError("exp_envelope needs a frequency grid")
    settings = get_settings()
    radial = _coordinates(grid)
    entries = []
    for k, magnitude in enumerate(_order_magnitudes(grid, K, pure_only=True)):
        resolved = magnitude >= settings.EXP_RESOLVED_FLOOR * magnitude.max()
        radius = float(radial[resolved].max())
        band = resolved & (radial >= (1 - settings.EXP_FIT_BAND) * radius)
        if np.unique(radial[band]).size < 2:
            raise PrecisionError(f"order {k}: resolved band too narrow for a tail fit")
        design = np.stack([np.ones(band.sum()), radial[band]], axis=1)
        (intercept, slope), *_ = np.linalg.lstsq(design, np.log(magnitude[band]), rcond=None)
        if slope >= _FLAT_SLOPE:
            raise NonExponentialTailError(k, float(slope))

        if r is None:
            rate = -slope / 2
        else:
            rate = float(r[k] if isinstance(r, Mapping) else r)
            if not 0 < rate < -slope:
                raise PreconditionError(f"order {k}: rate {rate} outside (0, {-slope:.4g})")
        inside = radial <= radius
        c = float(np.sum(magnitude[inside] * np.exp(rate * radial[inside])) * grid.cell_volume)
        c += _tail_remainder(intercept, -slope - rate, radius, grid.d)
        logger.debug("exp_envelope: k=%d slope=%.4f r=%.4f c=%.6g radius=%.3f", k, slope, rate, c, radius)
        entries.append(ExpEnvelopeEntry(k=k, r=rate, c=c, slope=float(slope), radius=radius))
    return ExpEnvelopeTable(entries=entries)


def pair_exp_envelope(grid_a: CharGrid, grid_b: CharGrid, K: int) -> ExpEnvelopeTable:
    """Common rate r_k = min of the two fits; c_k bounds the sum of both integrals."""
    if not grid_a.same_layout(grid_b):
        raise PreconditionError("envelope pair must share box and resolution")
    fit_a = exp_envelope(grid_a, K)
    fit_b = exp_envelope(grid_b, K)
    rates = {ea.k: min(ea.r, eb.r) for ea, eb in zip(fit_a.entries, fit_b.entries)}
    at_a = exp_envelope(grid_a, K, rates)
    at_b = exp_envelope(grid_b, K, rates)
    entries = [
        ExpEnvelopeEntry(
            k=ea.k,
            r=rates[ea.k],
            c=ea.c + eb.c,
            slope=max(ea.slope, eb.slope),
            radius=min(ea.radius, eb.radius),
        )
        for ea, eb in zip(at_a.entries, at_b.entries)
    ]
    return ExpEnvelopeTable(entries=entries)
