import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmsqueeze import gaussflow as gf
from wmsqueeze.errors import ValidationError

SYMPLECTIC_J = np.array([[0.0, 1.0], [-1.0, 0.0]])


def test_vacuum():
    s = gf.vacuum_cov()
    assert s.det == pytest.approx(0.25, rel=1e-15)
    assert gf.xi_sq(s) == pytest.approx(1.0, rel=1e-15)
    assert gf.min_quadrature_variance(s) == (0.5, 0.0)


def test_state_validation():
    with pytest.raises(ValidationError):
        gf.CovarianceState(np.zeros(2), np.array([[0.1, 0.0], [0.0, 0.1]]))
    with pytest.raises(ValidationError):
        gf.CovarianceState(np.zeros(2), np.array([[1.0, 0.2], [0.1, 1.0]]))
    with pytest.raises(ValidationError):
        gf.CovarianceState(np.zeros(3), gf.vacuum_cov().cov)
    with pytest.raises(ValidationError):
        gf.tat_product_matrix(0.3, 3)


def test_oat_example_value():
    s = gf.shear_oat(gf.vacuum_cov(), 5.0)
    var, _ = gf.min_quadrature_variance(s)
    assert var == pytest.approx(0.0049024, abs=1e-7)
    assert var == pytest.approx(gf.oat_min_variance_closed_form(5.0), rel=1e-10)


@pytest.mark.parametrize("lam", [0.0, 0.1, 1.0, 7.0, 300.0])
def test_oat_closed_form(lam):
    s = gf.shear_oat(gf.vacuum_cov(), lam)
    assert gf.min_quadrature_variance(s)[0] == pytest.approx(gf.oat_min_variance_closed_form(lam), rel=1e-9)


def test_oat_power_law():
    x = np.geomspace(10, 100, 20)  # A_w kappa^2
    var = [gf.min_quadrature_variance(gf.shear_oat(gf.vacuum_cov(), v / 2))[0] for v in x]
    assert gf.loglog_slope(x, var) == pytest.approx(-2.0, abs=0.05)
    # xi^2 -> 1/(A_w kappa^2)^2 at large coupling
    assert 2 * var[-1] * x[-1] ** 2 == pytest.approx(1.0, rel=0.02)


def test_tat_example_value():
    s = gf.tat_exact(gf.vacuum_cov(), 0.5)
    assert gf.min_quadrature_variance(s)[0] == pytest.approx(0.5 * np.exp(-2.0), rel=1e-12)
    assert gf.min_quadrature_variance(s)[0] == pytest.approx(0.0677, abs=1e-4)


def test_tat_exponential():
    rate, r2 = gf.tat_decay_exponent(np.linspace(0.1, 2.0, 20))
    assert r2 > 0.9999
    assert rate == pytest.approx(4.0, rel=1e-9)


def test_trotter_first_order():
    ns = [2, 4, 8, 16, 32, 64]
    errs, c = gf.trotter_errors(0.6, ns)
    assert all(b < a for a, b in zip(errs, errs[1:]))
    rates = errs[:-1] / errs[1:]
    assert rates[-1] == pytest.approx(2.0, rel=0.05)
    assert errs[-1] * ns[-1] == pytest.approx(c, rel=0.1)


@settings(max_examples=40, deadline=None)
@given(lam=st.floats(-20, 20), g=st.floats(-1.5, 1.5), n=st.sampled_from([2, 4, 10, 20]))
def test_symplectic_and_determinant(lam, g, n):
    for m in (gf.oat_matrix(lam), gf.tat_matrix(g), gf.tat_product_matrix(g, n)):
        assert np.max(np.abs(m @ SYMPLECTIC_J @ m.T - SYMPLECTIC_J)) < 1e-9 * max(1.0, np.abs(m).max() ** 2)
    s = gf.vacuum_cov()
    out = gf.shear_oat(s, lam)
    assert out.det == pytest.approx(0.25, abs=1e-12 * max(1.0, lam**4))
    out = gf.tat_exact(s, g)
    assert out.det == pytest.approx(0.25, abs=1e-12 * np.exp(4 * abs(g)))


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0.05, 10), phi=st.floats(0, np.pi))
def test_min_variance_rotation_invariant(lam, phi):
    s = gf.shear_oat(gf.vacuum_cov(), lam)
    var, angle = gf.min_quadrature_variance(s)
    rot = s.transform(gf.rotation_matrix(phi))
    var_r, angle_r = gf.min_quadrature_variance(rot)
    assert var_r == pytest.approx(var, rel=1e-9)
    diff = (angle_r - angle - phi) % np.pi
    assert min(diff, np.pi - diff) < 1e-6


def test_mean_transforms():
    s = gf.CovarianceState(np.array([1.0, 2.0]), gf.vacuum_cov().cov)
    out = gf.shear_oat(s, 0.5)
    assert np.allclose(out.mean, [3.0, 2.0])
