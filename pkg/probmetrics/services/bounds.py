"""Constant ledger and certificate engine for the weighted total variation bounds.

Polynomial regime: rho_p <= C * W_q^theta with theta -> 1 as l grows, and the
pointwise variant for derivatives of the density difference. Exponential
regime: rho_p <= C * W_q * |ln W_q|^{2d+1}. Every constant is recorded in the
certificate so the slack can be attributed.
"""
import hashlib
import logging
import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from probmetrics.config import get_settings
from probmetrics.exceptions import PreconditionError
from probmetrics.models import ConstantLedger, EnvelopeSide, GaussianMixture, Regime
from probmetrics.schemas import (
    BoundCertificate,
    BoundParams,
    ExpEnvelopeTable,
    PolyEnvelopeTable,
)
from probmetrics.services import distributions, spectral, transport

logger = logging.getLogger(__name__)


# ============================================================================
# Base constants
# ============================================================================

def ball_volume(d: int) -> float:
    """omega_d = pi^{d/2} / Gamma(d/2 + 1)."""
    return math.pi ** (d / 2) / special.gamma(d / 2 + 1)


def sphere_area(d: int) -> float:
    """s_d = 2 pi^{d/2} / Gamma(d/2)."""
    return 2 * math.pi ** (d / 2) / special.gamma(d / 2)


def gamma_k(k: int, d: int) -> float:
    """gamma_k = 2 pi^{d/2} / (Gamma(d/2)(k - d)) = int_{R^d} (1+|u|)^{-k} du bound."""
    if k <= d:
        raise PreconditionError(f"gamma_k needs k > d, got k={k}, d={d}")
    return sphere_area(d) / (k - d)


def _conjugate(q: float) -> float:
    if not q > 1:
        raise PreconditionError(f"q must exceed 1, got {q}")
    return q / (q - 1)


def c_circ(k: int, q: float, xi: GaussianMixture, eta: GaussianMixture, joint: str = "minkowski") -> float:
    """
    C_circ_k = E^{1/q'}|xi|^{kq'} + k 2^{k-1} E^{1/q'}[(|xi|^{k-1} + |eta|^{k-1})^{q'}].

    Args:
        k: derivative order, k >= 0 (C_circ_0 = 1)
        q: Wasserstein exponent, q > 1; q' is its conjugate
        xi: first law
        eta: second law
        joint: "independent" evaluates the joint expectation under the product
            law (integer q' only); "minkowski" bounds it by the triangle
            inequality in L^{q'}, which holds for every coupling

    Returns:
        The constant.
    """
    if int(k) != k or k < 0:
        raise PreconditionError(f"k must be a nonnegative integer, got {k}")
    q_conj = _conjugate(q)
    if k == 0:
        return 1.0
    first = distributions.abs_moment(xi, k * q_conj) ** (1 / q_conj)
    if joint == "minkowski":
        mixed = distributions.abs_moment(xi, (k - 1) * q_conj) ** (1 / q_conj) + distributions.abs_moment(
            eta, (k - 1) * q_conj
        ) ** (1 / q_conj)
    elif joint == "independent":
        n = round(q_conj)
        if abs(q_conj - n) > 1e-12:
            raise PreconditionError(f"independent joint moments need an integer q', got {q_conj}")
        total = sum(
            math.comb(n, j)
            * distributions.abs_moment(xi, (k - 1) * j)
            * distributions.abs_moment(eta, (k - 1) * (n - j))
            for j in range(n + 1)
        )
        mixed = total ** (1 / q_conj)
    else:
        raise PreconditionError(f"unknown joint mode {joint!r}")
    return first + k * 2 ** (k - 1) * mixed


def h_p_const(p: int, d: int) -> float:
    """Power-mean constant: |x|^p <= d^{p/2-1} sum_j x_j^p for even p."""
    if float(p) != int(p) or int(p) < 0 or int(p) % 2:
        raise PreconditionError(f"h_p needs an even integer p, got {p}")
    return float(d) ** (int(p) / 2 - 1)


def theta(l: int, p: float, d: int) -> float:
    if l <= d:
        raise PreconditionError(f"theta needs l > d, got l={l}, d={d}")
    return (l - d) * l / ((l + 1) * (l + p + d))


def choose_l(eps: float, p: float, d: int) -> int:
    """Smallest admissible l from the closed form, bumped until theta_{l,p} >= 1 - eps."""
    if not 0 < eps < 1:
        raise PreconditionError(f"epsilon must lie in (0, 1), got {eps}")
    root = math.sqrt(1 - eps)
    l = max(d + 1, math.ceil((d + root * (p + d)) / (1 - root) - 1e-9))
    while theta(l, p, d) < 1 - eps:
        l += 1
    return l


def choose_M(A: float, l: int) -> float:
    """Truncation radius A^{-1/(l+1)}; the constant regime A > 1 uses M = 1."""
    if not A > 0:
        raise PreconditionError(f"choose_M needs A > 0, got {A}")
    if A > 1:
        return 1.0
    return A ** (-1.0 / (l + 1))


def _envelope_entry(b: Union[float, PolyEnvelopeTable], k: int, l: int) -> float:
    if isinstance(b, PolyEnvelopeTable):
        return b.get(k, l)
    return float(b)


def hat_C(l: int, p: int, c_circ_p: float, b: Union[float, PolyEnvelopeTable], d: int) -> float:
    """(2 h_p d / (2 pi)^d) (C_circ_p omega_d + b_{p,l} gamma_l)."""
    prefactor = 2 * h_p_const(p, d) * d / (2 * math.pi) ** d
    return prefactor * (c_circ_p * ball_volume(d) + _envelope_entry(b, p, l) * gamma_k(l, d))


def bar_C(l: int, p: int, hat_c: float, a_2p: float, a_2l: float, d: int) -> float:
    """hat_C omega_d + 2 (a_{0,2p} a_{0,2l})^{1/2}."""
    return hat_c * ball_volume(d) + 2 * math.sqrt(a_2p) * math.sqrt(a_2l)


def moment_bound(a: GaussianMixture, b: GaussianMixture, m: float) -> float:
    """a_{0,m} = max(E|xi|^m, E|eta|^m)."""
    return max(distributions.abs_moment(a, m), distributions.abs_moment(b, m))


# ============================================================================
# Envelopes for certificates
# ============================================================================

def certificate_envelopes(
    a: GaussianMixture, b: GaussianMixture, params: BoundParams, extra_l: int = 0, resolution: Optional[int] = None
) -> PolyEnvelopeTable:
    """Frequency-side pair envelope covering orders 0..p' and powers 0..choose_l + extra_l."""
    grid_a, grid_b = spectral.pair_grids(a, b, resolution)
    L = choose_l(params.epsilon, params.p_even, params.d) + extra_l
    return spectral.pair_poly_envelope(
        spectral.char_fn_grid(grid_a), spectral.char_fn_grid(grid_b), params.p_even, L
    )


def certificate_exp_envelopes(
    a: GaussianMixture, b: GaussianMixture, params: BoundParams, resolution: Optional[int] = None
) -> ExpEnvelopeTable:
    grid_a, grid_b = spectral.pair_grids(a, b, resolution)
    return spectral.pair_exp_envelope(spectral.char_fn_grid(grid_a), spectral.char_fn_grid(grid_b), params.p_even)


def envelope_ref(table: Union[PolyEnvelopeTable, ExpEnvelopeTable]) -> str:
    """Short reference naming the table layout plus a digest of its content."""
    digest = hashlib.sha256(table.model_dump_json().encode()).hexdigest()[:12]
    if isinstance(table, PolyEnvelopeTable):
        return f"{table.side.value}:K={table.max_k},L={table.max_l}:{digest}"
    return f"exponential:K={max(e.k for e in table.entries)}:{digest}"


# ============================================================================
# Ledger
# ============================================================================

def _check_pair(a: GaussianMixture, b: GaussianMixture, params: BoundParams) -> None:
    if a.d != b.d or a.d != params.d:
        raise PreconditionError(f"laws (d={a.d}, d={b.d}) and params (d={params.d}) disagree on dimension")


def _symmetric_c_circ(k: int, q: float, a: GaussianMixture, b: GaussianMixture) -> float:
    return max(c_circ(k, q, a, b), c_circ(k, q, b, a))


def _frequency_table(table: PolyEnvelopeTable) -> PolyEnvelopeTable:
    if table.side != EnvelopeSide.FREQUENCY:
        logger.warning("using density-side entries d_{k,l} where the frequency-side b_{k,l} is expected")
    return table


def build_ledger(
    a: GaussianMixture, b: GaussianMixture, params: BoundParams, envelopes: PolyEnvelopeTable
) -> ConstantLedger:
    """
    Every constant of the polynomial-regime bound, for the weights p' and 0.

    The constant chain takes the moment a_{0,2l}; a_{0,l} is recorded next to
    it for comparison.
    """
    _check_pair(a, b, params)
    envelopes = _frequency_table(envelopes)
    d = params.d
    p = params.p_even
    l = choose_l(params.epsilon, p, d)

    moments = {float(m): moment_bound(a, b, m) for m in sorted({2 * p, 2 * l, l, params.p})}
    moments[0.0] = 1.0
    c_circ_map = {0: 1.0, p: _symmetric_c_circ(p, params.q, a, b)}
    h_map = {0: h_p_const(0, d), p: h_p_const(p, d)}
    hat_map, bar_map, theta_map = {}, {}, {}
    for s in (p, 0):
        hat_map[(l, s)] = hat_C(l, s, c_circ_map[s], envelopes, d)
        bar_map[(l, s)] = bar_C(l, s, hat_map[(l, s)], moments[float(2 * s)], moments[float(2 * l)], d)
        theta_map[(l, s)] = theta(l, s, d)
    logger.debug("build_ledger: l=%d a_0[2l]=%.4g a_0[l]=%.4g", l, moments[float(2 * l)], moments[float(l)])
    return ConstantLedger(
        gamma={l: gamma_k(l, d)},
        c_circ=c_circ_map,
        h=h_map,
        hat_C=hat_map,
        bar_C=bar_map,
        theta=theta_map,
        moments=moments,
    )


def _measured_A(a: GaussianMixture, b: GaussianMixture, params: BoundParams, A: Optional[float]) -> float:
    if A is not None:
        if A < 0 or not math.isfinite(A):
            raise PreconditionError(f"A must be finite and >= 0, got {A}")
        return float(A)
    return transport.wasserstein(a, b, params.q).value


def _lhs_rho(a: GaussianMixture, b: GaussianMixture, params: BoundParams, resolution: Optional[int]) -> float:
    return transport.rho_p(a, b, params.p, resolution=resolution).value


def _certificate(regime: Regime, params: BoundParams, **fields) -> BoundCertificate:
    lhs = fields["lhs"]
    rhs = fields["rhs"]
    cert = BoundCertificate(regime=regime, params=params, satisfied=lhs <= rhs, **fields)
    logger.info(
        "%s certificate: A=%.4g lhs=%.6g rhs=%.6g satisfied=%s", regime.value, cert.A, lhs, rhs, cert.satisfied
    )
    return cert


# ============================================================================
# Polynomial regime
# ============================================================================

def certificate_lemma1(
    a: GaussianMixture,
    b: GaussianMixture,
    params: BoundParams,
    envelopes: Optional[PolyEnvelopeTable] = None,
    A: Optional[float] = None,
    resolution: Optional[int] = None,
) -> BoundCertificate:
    """
    Integrated polynomial-regime certificate rho_p <= (2 C_bar_{l,p'} + C_bar_{l,0}) A^theta.

    A non-even p is promoted to p'; the weight 1 + |x|^p is then dominated by
    (1 + |x|^{p'}) + 1 and the extra total variation term adds 2 C_bar_{l,0}.

    Args:
        a: first law
        b: second law
        params: exponents and dimension
        envelopes: frequency-side table covering k in {0, p'} at l = choose_l;
            computed from the pair when omitted
        A: measured W_q; computed by the exact 1-D or OT method when omitted
        resolution: grid resolution for the measured rho_p and the envelopes

    Returns:
        BoundCertificate with regime lemma1-poly.
    """
    _check_pair(a, b, params)
    A = _measured_A(a, b, params, A)
    lhs = _lhs_rho(a, b, params, resolution)
    l = choose_l(params.epsilon, params.p_even, params.d)
    if A == 0:
        return _certificate(
            Regime.LEMMA1, params, l=l, M=1.0, A=0.0, envelope_ref="none", constants={},
            rhs=0.0, lhs=lhs, branch="identical",
        )

    envelopes = envelopes or certificate_envelopes(a, b, params, resolution=resolution)
    ledger = build_ledger(a, b, params, envelopes)
    p = params.p_even
    bar_p = ledger.bar_C[(l, p)]
    bar_0 = ledger.bar_C[(l, 0)]
    factor = 2 * bar_p + bar_0 + (2 * bar_0 if params.promoted else 0.0)
    constants = ledger.flatten()
    if A > 1:
        crude = 2 + 2 * ledger.moments[float(params.p)]
        rhs, M, branch = max(factor, crude) * A, 1.0, "constant"
    else:
        rhs, M, branch = factor * A ** ledger.theta[(l, p)], choose_M(A, l), "power"
    constants["factor"] = factor
    return _certificate(
        Regime.LEMMA1, params, l=l, M=M, A=A, envelope_ref=envelope_ref(envelopes),
        constants=constants, rhs=rhs, lhs=lhs, branch=branch,
    )


def pointwise_lhs(
    a: GaussianMixture, b: GaussianMixture, p: float, alpha: Sequence[int], resolution: Optional[int] = None
) -> float:
    """Grid sup of |d^alpha f_a - d^alpha f_b| (1 + |x|^p)."""
    grid_a, grid_b = spectral.pair_grids(a, b, resolution)
    derivative = spectral.signed_derivative(grid_a.values - grid_b.values, grid_a.lower, grid_a.upper, alpha)
    weight = 1.0 + np.linalg.norm(grid_a.coordinates(), axis=-1) ** p
    return float(np.max(np.abs(derivative) * weight))


def _pointwise_factor(s: int, l: int, order: int, c_circ_s: float, b_sl: float, d: int) -> float:
    """K_{alpha,s} = (2 h_s m_s / (2 pi)^d)(C_circ_s omega_d + b_{s,l} gamma_{l-|alpha|})."""
    h_s, m_s = (1.0, 1) if s == 0 else (h_p_const(s, d), d)
    return 2 * h_s * m_s / (2 * math.pi) ** d * (c_circ_s * ball_volume(d) + b_sl * gamma_k(l - order, d))


def certificate_pointwise(
    a: GaussianMixture,
    b: GaussianMixture,
    params: BoundParams,
    alpha: Optional[Sequence[int]] = None,
    envelopes: Optional[PolyEnvelopeTable] = None,
    A: Optional[float] = None,
    resolution: Optional[int] = None,
) -> BoundCertificate:
    """
    Pointwise certificate sup |d^alpha (f_a - f_b)| (1 + |x|^p) <= K A^{(l-d-|alpha|)/(l+1)}.

    l is choose_l(eps, p', d) + |alpha|; K = K_{alpha,p'} + w K_{alpha,0} with
    w = 2 when p was promoted and 1 otherwise.
    """
    _check_pair(a, b, params)
    d = params.d
    alpha = [0] * d if alpha is None else [int(x) for x in alpha]
    if len(alpha) != d or min(alpha) < 0:
        raise PreconditionError(f"alpha must be a multiindex of length {d}")
    order = sum(alpha)
    p = params.p_even
    l = choose_l(params.epsilon, p, d) + order
    A = _measured_A(a, b, params, A)
    lhs = pointwise_lhs(a, b, params.p, alpha, resolution)
    if A == 0:
        return _certificate(
            Regime.POINTWISE, params, l=l, M=1.0, A=0.0, envelope_ref="none", constants={},
            rhs=0.0, lhs=lhs, branch="identical", alpha=alpha,
        )

    envelopes = _frequency_table(envelopes or certificate_envelopes(a, b, params, order, resolution))
    weight_0 = 2.0 if params.promoted else 1.0
    c_circ_p = _symmetric_c_circ(p, params.q, a, b)
    K_p = _pointwise_factor(p, l, order, c_circ_p, envelopes.get(p, l), d)
    K_0 = _pointwise_factor(0, l, order, 1.0, envelopes.get(0, l), d)
    factor = K_p + weight_0 * K_0
    exponent = (l - d - order) / (l + 1)
    if A > 1:
        rhs, M, branch = factor * A, 1.0, "constant"
    else:
        rhs, M, branch = factor * A**exponent, choose_M(A, l), "power"
    constants = {
        f"gamma[{l - order}]": gamma_k(l - order, d),
        f"C_circ[{p}]": c_circ_p,
        f"b[{p},{l}]": envelopes.get(p, l),
        f"b[0,{l}]": envelopes.get(0, l),
        f"K[{p}]": K_p,
        "K[0]": K_0,
        "w": weight_0,
        "exponent": exponent,
        "factor": factor,
    }
    return _certificate(
        Regime.POINTWISE, params, l=l, M=M, A=A, envelope_ref=envelope_ref(envelopes),
        constants=constants, rhs=rhs, lhs=lhs, branch=branch, alpha=alpha,
    )


# ============================================================================
# Exponential regime
# ============================================================================

def _exponential_chain(
    s: int,
    params: BoundParams,
    rate_s: float,
    c_s: float,
    c_circ_s: float,
    a_0s: float,
    r: float,
    r_star: float,
    C_sharp: float,
) -> Tuple[float, dict]:
    """T_s bounding int |x|^s |f_a - f_b| / (A |ln A|^{2d+1}), plus its intermediate constants."""
    d = params.d
    h_s, m_s = (1.0, 1) if s == 0 else (h_p_const(s, d), d)
    omega = ball_volume(d)
    # Cauchy-Schwarz: int |Delta_s phi|^2 e^{r|u|} <= 2 sup|Delta_s phi| * int |Delta_s phi| e^{r|u|}
    K_c = m_s * math.sqrt(2 * a_0s * c_s)
    kappa = max(rate_s ** (-(d + 1)), 2 ** ((d - 1) / 2) * rate_s ** (-(d + 3) / 2))
    tail = K_c * math.sqrt(sphere_area(d) * math.e * math.factorial(d - 1) / rate_s**d) * kappa
    near = 2 * m_s * c_circ_s * omega * (2 / rate_s) ** (d + 1)
    C_pp = h_s * (2 * math.pi) ** (-d) * (near + tail)
    moment_term = 1.0 if s == 0 else (2 * s / (math.e * r)) ** s
    T_s = omega * (2 / r) ** d * C_pp + C_sharp * moment_term / r_star ** (2 * d + 1)
    return T_s, {f"K_c[{s}]": K_c, f"kappa[{s}]": kappa, f"C''[{s}]": C_pp, f"T[{s}]": T_s}


def certificate_lemma2(
    a: GaussianMixture,
    b: GaussianMixture,
    params: BoundParams,
    exp_envelopes: Optional[ExpEnvelopeTable] = None,
    r: Optional[float] = None,
    C_sharp: Optional[float] = None,
    A: Optional[float] = None,
    resolution: Optional[int] = None,
) -> BoundCertificate:
    """
    Exponential-regime certificate rho_p <= C'''' A |ln A|^{2d+1}.

    Valid for 0 < A < exp(-r*) with r* the larger of the fitted rates at
    orders 0 and p'. The frequency cut sits at M1 = 2|ln A|/r_s and the
    spatial cut at M2 = 2|ln A|/r, where r is the exponential-moment rate with
    E e^{r|xi|} + E e^{r|eta|} <= C_sharp. Outside that window the constant
    bound (2 + 2 a_{0,p}) max(A, 1) is certified instead.

    Raises:
        NonExponentialTailError: the envelope fit found no exponential decay.
    """
    _check_pair(a, b, params)
    settings = get_settings()
    r = settings.EXP_MOMENT_RATE if r is None else float(r)
    if not r > 0:
        raise PreconditionError(f"exponential moment rate must be positive, got {r}")
    C_sharp = distributions.exp_moment(a, r) + distributions.exp_moment(b, r) if C_sharp is None else C_sharp
    d = params.d
    p = params.p_even
    A = _measured_A(a, b, params, A)
    lhs = _lhs_rho(a, b, params, resolution)
    if A == 0:
        return _certificate(
            Regime.LEMMA2, params, l=0, M=1.0, A=0.0, envelope_ref="none", constants={},
            rhs=0.0, lhs=lhs, branch="identical",
        )

    exp_envelopes = exp_envelopes or certificate_exp_envelopes(a, b, params, resolution)
    entry_0 = exp_envelopes.get(0)
    entry_p = exp_envelopes.get(p)
    r_star = max(entry_0.r, entry_p.r)
    a_0p = moment_bound(a, b, params.p)
    constants = {"r": r, "C_sharp": C_sharp, "r_star": r_star, f"a_0[{params.p:g}]": a_0p}

    if A >= math.exp(-r_star):
        rhs = (2 + 2 * a_0p) * max(A, 1.0)
        return _certificate(
            Regime.LEMMA2, params, l=0, M=1.0, A=A, envelope_ref=envelope_ref(exp_envelopes),
            constants=constants, rhs=rhs, lhs=lhs, branch="constant",
        )

    log_A = abs(math.log(A))
    T = {}
    for s, entry in ((p, entry_p), (0, entry_0)):
        c_circ_s = 1.0 if s == 0 else _symmetric_c_circ(s, params.q, a, b)
        a_0s = 1.0 if s == 0 else moment_bound(a, b, s)
        T[s], chain = _exponential_chain(s, params, entry.r, entry.c, c_circ_s, a_0s, r, r_star, C_sharp)
        constants.update(chain)
        constants.update({f"r[{s}]": entry.r, f"c[{s}]": entry.c, f"C_circ[{s}]": c_circ_s, f"M1[{s}]": 2 * log_A / entry.r})
    C_4 = T[p] + (3 if params.promoted else 1) * T[0]
    constants.update({"C''''": C_4, "M2": 2 * log_A / r})
    rhs = C_4 * A * log_A ** (2 * d + 1)
    return _certificate(
        Regime.LEMMA2, params, l=0, M=2 * log_A / entry_p.r, A=A, envelope_ref=envelope_ref(exp_envelopes),
        constants=constants, rhs=rhs, lhs=lhs, branch="power",
    )
