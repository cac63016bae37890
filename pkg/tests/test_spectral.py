"""Tests for characteristic functions, grid transforms and envelopes."""
import math

import numpy as np
import pytest

from probmetrics.exceptions import NonExponentialTailError, PreconditionError, UnstableDifferentiationError
from probmetrics.models import CharGrid, EnvelopeSide, GaussianMixture, GridDensity
from probmetrics.services import distributions, spectral


def _default_grid(dist, resolution=None):
    box = distributions.common_box(dist, dist)
    return distributions.discretize(dist, box, distributions.grid_resolution(dist.d, resolution))


def test_char_fn_analytic_examples(standard_normal, shifted_normal, bimodal):
    """Test closed-form characteristic function values."""
    assert spectral.char_fn_analytic(standard_normal, 1.0) == pytest.approx(0.6065307, abs=1e-7)
    assert spectral.char_fn_analytic(bimodal, 0.0) == pytest.approx(1.0, abs=1e-15)
    value = spectral.char_fn_analytic(shifted_normal, math.pi)
    assert abs(value) == pytest.approx(0.0071919, abs=1e-7)
    assert value.real < 0


def test_char_fn_analytic_dimension_mismatch(standard_normal_2d):
    """Test a frequency of the wrong length is rejected."""
    with pytest.raises(PreconditionError):
        spectral.char_fn_analytic(standard_normal_2d, 1.0)


@pytest.mark.parametrize("resolution", [1024, 4096])
def test_char_fn_grid_matches_analytic(test_mixtures, resolution):
    """Test the grid transform against the analytic cf on the inner half of the frequency box."""
    for dist in test_mixtures:
        grid = spectral.char_fn_grid(_default_grid(dist, resolution))
        u = grid.coordinates().reshape(-1, 1)
        inner = np.abs(u[:, 0]) <= grid.bound[0] / 2
        exact = spectral.char_fn_values(dist, u[inner])
        assert np.max(np.abs(grid.values.ravel()[inner] - exact)) <= 1e-6


def test_char_fn_grid_value_on_node():
    """Test the value at u = 1 when the box makes u = 1 a frequency node."""
    grid = distributions.discretize(GaussianMixture.gaussian(0.0, 1.0), [-10 * math.pi, 10 * math.pi], 4096)
    assert spectral.char_fn_grid(grid).nearest(1.0) == pytest.approx(math.exp(-0.5), abs=1e-6)


def test_char_fn_grid_translation_changes_phase_only(standard_normal):
    """Test shifted densities on one box share the modulus grid."""
    box = [-12.0, 12.0]
    centred = spectral.char_fn_grid(distributions.discretize(standard_normal, box, 1024))
    moved = spectral.char_fn_grid(distributions.discretize(GaussianMixture.gaussian(2.0, 1.0), box, 1024))
    assert np.max(np.abs(np.abs(centred.values) - np.abs(moved.values))) <= 1e-9


def test_char_fn_grid_properties(bimodal):
    """Test normalization, the unit bound, Hermitian symmetry and Plancherel."""
    f = _default_grid(bimodal, 1024)
    phi = spectral.char_fn_grid(f)
    assert phi.values[phi.zero_index] == pytest.approx(1.0, abs=1e-8)
    assert np.abs(phi.values).max() <= 1 + 1e-12
    values = phi.values[1:]
    assert np.max(np.abs(values - np.conj(values[::-1]))) <= 1e-10
    space = float(np.sum(f.values**2) * f.cell_volume)
    frequency = float(np.sum(np.abs(phi.values) ** 2) * phi.cell_volume) / (2 * math.pi)
    assert frequency == pytest.approx(space, rel=1e-6)


def test_char_fn_grid_round_trip(test_mixtures):
    """Test inversion recovers the grid density."""
    for dist in test_mixtures:
        f = _default_grid(dist, 1024)
        recovered = spectral.inverse_char_grid(spectral.char_fn_grid(f))
        assert np.max(np.abs(recovered - f.values)) <= 1e-8


def test_char_fn_grid_needs_unit_mass():
    """Test grids without unit mass are rejected."""
    with pytest.raises(PreconditionError):
        spectral.char_fn_grid(GridDensity([-1.0], [1.0], np.ones(8)))


@pytest.mark.parametrize("p, expected", [(2, -1.0), (4, 3.0)])
def test_delta_p_char_at_origin(standard_normal, p, expected):
    """Test Delta_p phi(0) = i^p E X^p."""
    delta = spectral.delta_p_char(standard_normal, p, resolution=4096)
    assert not delta.is_char_fn
    assert delta.values[delta.zero_index] == pytest.approx(expected, abs=1e-6)


def test_delta_p_char_second_derivative(standard_normal):
    """Test Delta_2 phi(u) = (u^2 - 1) exp(-u^2/2), which vanishes at u = 1."""
    delta = spectral.delta_p_char(standard_normal, 2, resolution=4096)
    u = delta.axes()[0]
    near = np.abs(u) <= 20
    exact = (u[near] ** 2 - 1) * np.exp(-u[near] ** 2 / 2)
    assert np.max(np.abs(delta.values[near] - exact)) <= 1e-6


def test_delta_p_char_2d_moment(standard_normal_2d):
    """Test Delta_2 phi(0) = -(E x_1^2 + E x_2^2) in two dimensions."""
    delta = spectral.delta_p_char(standard_normal_2d, 2)
    assert delta.values[delta.zero_index] == pytest.approx(-2.0, abs=1e-6)


@pytest.mark.parametrize("p", [1, 3, 0, 2.5])
def test_delta_p_char_rejects_odd_orders(standard_normal, p):
    """Test only even orders >= 2 are accepted."""
    with pytest.raises(PreconditionError):
        spectral.delta_p_char(standard_normal, p)


def test_weighted_diff_reconstruct_translate(translate_pair):
    """Test the reconstruction against the direct product on the h = 0.5 pair."""
    a, b = translate_pair(0.5)
    reconstructed = spectral.weighted_diff_reconstruct(a, b, 2, resolution=4096)
    grid_a, grid_b = spectral.pair_grids(a, b, resolution=4096)
    direct = (grid_a.values - grid_b.values) * grid_a.coordinates()[..., 0] ** 2
    assert np.max(np.abs(reconstructed - direct)) <= 1e-3


def test_weighted_diff_reconstruct_identical(bimodal):
    """Test the reconstruction vanishes for a = b."""
    assert np.max(np.abs(spectral.weighted_diff_reconstruct(bimodal, bimodal, 2, resolution=1024))) <= 1e-12


def test_weighted_diff_reconstruct_sign_pattern(standard_normal):
    """Test the sign pattern of (f_a - f_b) x^2 for a scale change."""
    wide = GaussianMixture.gaussian(0.0, 1.21)
    reconstructed = spectral.weighted_diff_reconstruct(standard_normal, wide, 2, resolution=4096)
    grid_a, grid_b = spectral.pair_grids(standard_normal, wide, resolution=4096)
    direct = (grid_a.values - grid_b.values) * grid_a.coordinates()[..., 0] ** 2
    significant = np.abs(direct) > 1e-6
    assert np.array_equal(np.sign(reconstructed[significant]), np.sign(direct[significant]))


def test_pair_grids_rejects_mismatched_layouts(standard_normal):
    """Test grids on different boxes cannot be paired."""
    left = distributions.discretize(standard_normal, [-10.0, 10.0], 1024)
    right = distributions.discretize(standard_normal, [-11.0, 11.0], 1024)
    with pytest.raises(PreconditionError):
        spectral.pair_grids(left, right)


def test_multiindices():
    """Test the multiindices of order 2 in two dimensions."""
    assert sorted(spectral.multiindices(2, 2)) == [(0, 2), (1, 1), (2, 0)]
    assert list(spectral.multiindices(3, 0)) == [(0, 0, 0)]


def test_spectral_derivative_density_side(standard_normal):
    """Test f'(x) = -x f(x) for the standard normal."""
    grid = _default_grid(standard_normal, 4096)
    derivative = spectral.spectral_derivative(grid, (1,))
    x = grid.axes()[0]
    assert np.max(np.abs(derivative - (-x * grid.values))) <= 1e-8


def test_spectral_derivative_frequency_side(standard_normal):
    """Test phi'(u) = -u exp(-u^2/2) for the standard normal."""
    phi = spectral.char_fn_grid(_default_grid(standard_normal, 4096))
    derivative = spectral.spectral_derivative(phi, (1,))
    u = phi.axes()[0]
    near = np.abs(u) <= 20
    assert np.max(np.abs(derivative[near] - (-u[near] * np.exp(-u[near] ** 2 / 2)))) <= 1e-6


def test_spectral_derivative_order_zero_is_identity(bimodal):
    """Test alpha = 0 returns the values themselves."""
    grid = _default_grid(bimodal, 1024)
    assert np.array_equal(spectral.spectral_derivative(grid, (0,)), grid.values)


def test_signed_derivative_matches_density_derivative(bimodal):
    """Test the signed-array path agrees with the density path."""
    grid = _default_grid(bimodal, 1024)
    signed = spectral.signed_derivative(grid.values, grid.lower, grid.upper, (2,))
    assert np.max(np.abs(signed - spectral.spectral_derivative(grid, (2,)))) <= 1e-12


def test_poly_envelope_density_examples(standard_normal):
    """Test the density-side entries d_{0,0} and d_{0,2} of the standard normal."""
    table = spectral.poly_envelope(_default_grid(standard_normal, 4096), 0, 2)
    assert table.side == EnvelopeSide.DENSITY
    assert table.provenance == "empirical"
    assert table.get(0, 0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-7)
    assert table.get(0, 2) == pytest.approx(0.967883, abs=1e-5)


def test_poly_envelope_frequency_origin(standard_normal):
    """Test b_{0,0} = 1 for any characteristic function."""
    table = spectral.poly_envelope(spectral.char_fn_grid(_default_grid(standard_normal, 4096)), 2, 2)
    assert table.side == EnvelopeSide.FREQUENCY
    assert table.get(0, 0) == pytest.approx(1.0, abs=1e-10)


def test_poly_envelope_rejects_underresolved_grid():
    """Test N(0, 0.09) on 64 nodes over [-10, 10] fails the band-edge check."""
    grid = distributions.discretize(GaussianMixture.gaussian(0.0, 0.09), [-10.0, 10.0], 64)
    with pytest.raises(UnstableDifferentiationError):
        spectral.poly_envelope(grid, 2, 0)
    with pytest.raises(UnstableDifferentiationError):
        spectral.spectral_derivative(grid, (1,))


def test_pair_poly_envelope_dominates_both(standard_normal, bimodal):
    """Test the pair table bounds each law's own table."""
    grid_a, grid_b = spectral.pair_grids(standard_normal, bimodal, resolution=1024)
    pair = spectral.pair_poly_envelope(grid_a, grid_b, 2, 3)
    for own in (spectral.poly_envelope(grid_a, 2, 3), spectral.poly_envelope(grid_b, 2, 3)):
        for entry in own.entries:
            assert pair.get(entry.k, entry.l) >= entry.c


def _refinement_change(fine, coarse):
    return max(abs(ef.c - ec.c) / max(ef.c, ec.c) for ef, ec in zip(fine.entries, coarse.entries) if ef.c > 0)


@pytest.mark.slow
def test_envelopes_stable_under_refinement(test_mixtures):
    """Test both envelope tables move by less than 5% when the spacing halves."""
    for dist in test_mixtures:
        box = distributions.common_box(dist, dist)
        coarse = distributions.discretize(dist, box, 1024)
        fine = distributions.discretize(dist, box, 2048)
        density_fine = spectral.poly_envelope(fine, 4, 6)
        density_coarse = spectral.poly_envelope(coarse, 4, 6)
        assert all(math.isfinite(e.c) for e in density_fine.entries)
        assert _refinement_change(density_fine, density_coarse) < 0.05
        frequency_fine = spectral.poly_envelope(spectral.char_fn_grid(fine), 4, 6)
        frequency_coarse = spectral.poly_envelope(spectral.char_fn_grid(coarse), 4, 6)
        assert _refinement_change(frequency_fine, frequency_coarse) < 0.05


def test_exp_envelope_standard_normal(standard_normal):
    """Test a positive rate, a finite constant and reproducibility at the returned rate."""
    phi = spectral.char_fn_grid(_default_grid(standard_normal))
    entry = spectral.exp_envelope(phi, 0).get(0)
    assert entry.r > 0
    assert math.isfinite(entry.c)
    again = spectral.exp_envelope(phi, 0, r={0: entry.r}).get(0)
    assert again.c == pytest.approx(entry.c, rel=1e-2)


def test_exp_envelope_rejects_flat_tail():
    """Test a unit-modulus frequency grid has no exponential decay."""
    atom_like = CharGrid([-10.0], [10.0], np.ones(64))
    with pytest.raises(NonExponentialTailError):
        spectral.exp_envelope(atom_like, 0)


def test_exp_envelope_rate_outside_fit_is_rejected(standard_normal):
    """Test a caller rate at or above the fitted decay rate is refused."""
    phi = spectral.char_fn_grid(_default_grid(standard_normal))
    slope = spectral.exp_envelope(phi, 0).get(0).slope
    with pytest.raises(PreconditionError):
        spectral.exp_envelope(phi, 0, r=-slope)


def test_exp_envelope_wider_gaussian_rate(standard_normal):
    """Test the fitted rate grows with sigma while the sigma = 1 rate stays admissible for sigma = 2.

    exp(-2u^2) <= exp(-u^2/2), so the wider law decays faster in u and its
    fitted slope is steeper; no smaller rate is forced on it.
    """
    narrow = spectral.exp_envelope(spectral.char_fn_grid(_default_grid(standard_normal)), 0).get(0)
    wide_dist = GaussianMixture.gaussian(0.0, 4.0)
    wide_phi = spectral.char_fn_grid(_default_grid(wide_dist))
    wide = spectral.exp_envelope(wide_phi, 0).get(0)
    assert wide.r >= narrow.r
    at_narrow_rate = spectral.exp_envelope(wide_phi, 0, r=narrow.r).get(0)
    assert at_narrow_rate.c <= narrow.c


def test_pair_exp_envelope_uses_common_rate(translate_pair):
    """Test the pair rate is the smaller fitted rate and the constant covers both."""
    grid_a, grid_b = spectral.pair_grids(*translate_pair(0.1))
    phi_a, phi_b = spectral.char_fn_grid(grid_a), spectral.char_fn_grid(grid_b)
    pair = spectral.pair_exp_envelope(phi_a, phi_b, 2)
    for k in range(3):
        own_a = spectral.exp_envelope(phi_a, k).get(k)
        own_b = spectral.exp_envelope(phi_b, k).get(k)
        assert pair.get(k).r == pytest.approx(min(own_a.r, own_b.r))
        assert pair.get(k).c > 0
