from math import gamma, pi, sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmsqueeze import protocols as pr
from wmsqueeze import quadstate as qs
from wmsqueeze.errors import DegreeTooLarge, TruncationError, ValidationError

# minimum of (1 - 3c + 15c^2/4)/(1 - c + 3c^2/4), reached at c = 2(3 - sqrt 6)/3
OPT_RATIO = 3.0 - sqrt(6.0)


def quadrature_moments(state, points=8001):
    s = sqrt(state.width_sq)
    p = np.linspace(-12 * s, 12 * s, points)
    dens = np.abs(state(p)) ** 2
    norm = np.trapezoid(dens, p)
    mean = np.trapezoid(p * dens, p) / norm
    var = np.trapezoid((p - mean) ** 2 * dens, p) / norm
    return norm, mean, var


def test_vacuum_moments():
    norm, mean, var = qs.moments(qs.make_vacuum())
    assert norm == pytest.approx(sqrt(pi), rel=1e-15)
    assert mean == 0.0
    assert var == pytest.approx(0.5, rel=1e-15)
    assert qs.squeezing_parameter(qs.make_vacuum()) == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("k,expected", [(0, 1.7724539), (1, 0.8862269), (2, 1.3293404)])
def test_gaussian_moment_unit_width(k, expected):
    assert qs.gaussian_moment(k, 1.0) == pytest.approx(expected, abs=1e-7)


def test_gaussian_moment_matches_gamma():
    for k in range(12):
        for s_sq in (0.3, 1.0, 2.5):
            assert qs.gaussian_moment(k, s_sq) == pytest.approx(s_sq ** (k + 0.5) * gamma(k + 0.5), rel=1e-13)


def test_gaussian_moment_guards():
    with pytest.raises(DegreeTooLarge):
        qs.gaussian_moment(qs.MAX_MOMENT_ORDER + 5, 1.0)
    with pytest.raises(ValidationError):
        qs.gaussian_moment(-1, 1.0)
    with pytest.raises(ValidationError):
        qs.gaussian_moment(1, 0.0)


def test_quadratic_factor_identity_and_shape():
    vac = qs.make_vacuum()
    same = qs.apply_quadratic_factor(vac, 0.0)
    assert same.poly_coeffs == vac.poly_coeffs
    assert same.width_sq == vac.width_sq
    s = qs.apply_quadratic_factor(vac, 0.3)
    assert s.degree == 2
    assert s.poly_coeffs == (1.0, 0.0, -0.3)
    assert s.is_even


def test_state_validation():
    with pytest.raises(ValidationError):
        qs.QuadratureState((0.0, 0.0))
    with pytest.raises(ValidationError):
        qs.QuadratureState((1.0,), 0.0)
    with pytest.raises(ValidationError):
        qs.QuadratureState((np.nan,))
    with pytest.raises(DegreeTooLarge):
        qs.QuadratureState(tuple([1.0] * (qs.MAX_DEGREE + 2)))


def test_quartic_free_state_against_quadrature():
    state = qs.apply_quadratic_factor(qs.make_vacuum(), 0.2)
    _, _, var = qs.moments(state)
    _, _, var_q = quadrature_moments(state)
    assert abs(var - var_q) < 1e-10


def test_optimal_state_ratio():
    kappa = 0.1
    aw = 74.27
    state = qs.apply_quadratic_factor(qs.gaussian_state(pr.xi_s_sq(kappa)), (aw / 2 - 0.25) * kappa**2)
    ratio = qs.squeezing_parameter(state) / pr.xi_s_sq(kappa)
    assert ratio == pytest.approx(0.5505, abs=2e-4)
    assert qs.squeezing_parameter(state) == pytest.approx(0.5478, abs=2e-4)


def test_pure_gaussian_width():
    kappa = sqrt(2.0)
    assert qs.squeezing_parameter(qs.gaussian_state(pr.xi_s_sq(kappa))) == pytest.approx(0.5, rel=1e-14)


def test_small_coupling_optimum_ratio():
    kappa = 1e-3
    state = pr.wm_state(kappa, pr.optimal_weak_value(kappa))
    assert qs.squeezing_parameter(state) / pr.xi_s_sq(kappa) == pytest.approx(OPT_RATIO, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    coeffs=st.lists(st.floats(-2, 2), min_size=1, max_size=5),
    width=st.floats(0.2, 2.0),
)
def test_moment_engine_matches_quadrature(coeffs, width):
    poly = np.zeros(2 * len(coeffs) - 1)
    poly[0::2] = coeffs
    poly[0] += 1.0  # keep the polynomial away from zero
    state = qs.QuadratureState(tuple(poly), width)
    norm, mean, var = qs.moments(state)
    norm_q, mean_q, var_q = quadrature_moments(state, points=6001)
    assert mean == 0.0
    assert var > 0
    assert norm == pytest.approx(norm_q, rel=1e-9)
    assert var == pytest.approx(var_q, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-5, 5), kappa=st.floats(0.01, 3.0))
def test_protocol_states_are_even(c, kappa):
    state = qs.apply_quadratic_factor(qs.gaussian_state(pr.xi_s_sq(kappa)), c)
    assert state.is_even
    _, mean, var = qs.moments(state)
    assert mean == 0.0
    assert var > 0


def test_odd_state_has_mean():
    state = qs.QuadratureState((1.0, 0.5), 1.0)
    _, mean, _ = qs.moments(state)
    _, mean_q, _ = quadrature_moments(state)
    assert mean == pytest.approx(mean_q, abs=1e-10)
    assert mean != 0


def test_fock_vacuum():
    amps = qs.to_fock_even(qs.make_vacuum(), 8)
    assert abs(amps.amps[0]) == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(amps.amps[1:])) < 1e-12


def test_fock_requirements():
    with pytest.raises(ValidationError):
        qs.to_fock_even(qs.QuadratureState((1.0, 1.0)), 8)
    with pytest.raises(ValidationError):
        qs.to_fock_even(qs.make_vacuum(), 7)
    with pytest.raises(ValidationError):
        qs.to_fock_even(qs.apply_quadratic_factor(qs.make_vacuum(), 1.0), 4)
    with pytest.raises(TruncationError):
        qs.to_fock_even(qs.gaussian_state(0.05), 6)


def p_squared_matrix(cutoff):
    n = np.arange(cutoff + 1)
    m = np.diag(n + 0.5)
    off = -0.5 * np.sqrt((n[:-2] + 1) * (n[:-2] + 2))
    return m + np.diag(off, 2) + np.diag(off, -2)


@pytest.mark.parametrize("kappa,aw", [(0.1, 74.27), (0.5, 3.8), (1.0, 1.6), (0.3, -4.0)])
def test_fock_round_trip_variance(kappa, aw):
    state = pr.wm_state(kappa, aw)
    cutoff = 60
    amps = qs.to_fock_even(state, cutoff).amps
    var_fock = np.real(np.vdot(amps, p_squared_matrix(cutoff) @ amps))
    assert var_fock == pytest.approx(qs.moments(state)[2], abs=1e-8)
    assert np.all(amps[1::2] == 0)


def test_two_level_optimum_weights():
    # 2x2 restriction of P^2 to {|0>, |2>}: lowest eigenvector has weights 1/2 +- 1/sqrt(6)
    kappa = 0.02
    amps = qs.to_fock_even(pr.wm_state(kappa, pr.optimal_weak_value(kappa)), 16).amps
    assert abs(amps[2]) ** 2 == pytest.approx(0.5 - 1 / sqrt(6), abs=5e-4)
    assert abs(amps[0]) ** 2 == pytest.approx(0.5 + 1 / sqrt(6), abs=5e-4)
    assert np.sum(np.abs(amps[4:]) ** 2) < 1e-3
    at_k01 = qs.to_fock_even(pr.wm_state(0.1, 74.27), 16).amps
    assert abs(at_k01[2]) ** 2 == pytest.approx(0.0918, abs=2e-3)
    assert abs(at_k01[0]) ** 2 + abs(at_k01[2]) ** 2 > 0.99


def test_large_weak_value_approaches_equal_superposition():
    kappa = 0.1
    ratios = []
    for aw in (74.27, 120.0, 200.0, 400.0):
        amps = qs.to_fock_even(pr.wm_state(kappa, aw), 24).amps
        ratios.append(abs(amps[2] / amps[0]))
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    assert ratios[0] < 1 < ratios[-1]
