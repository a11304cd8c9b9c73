"""Gaussian (covariance-matrix) picture of the imaginary-weak-value limits.

The atomic mode is tracked by the mean of ``(X_A, P_A)`` and its 2x2
covariance. Effective unitaries quadratic in the quadratures act as real
symplectic matrices ``S``: ``mean -> S mean`` and ``cov -> S cov S^T``.

* one-axis twisting ``exp(-i lam P^2)`` shears ``X -> X + 2 lam P``;
* two-axis twisting ``exp(-i g (P^2 - X^2))`` is the hyperbolic flow
  ``X -> X cosh 2g + P sinh 2g``, ``P -> X sinh 2g + P cosh 2g``;
* its alternating-pulse approximation composes ``n/2`` pairs of opposite shears.
"""

from dataclasses import dataclass
from math import cosh, log, sinh

import numpy as np

from .errors import ValidationError

VACUUM_VARIANCE = 0.5
PURE_DET = 0.25
DET_TOL = 1e-10


@dataclass(frozen=True)
class CovarianceState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise ValidationError(f"expected mean of shape (2,) and covariance (2, 2), got {mean.shape} and {cov.shape}")
        if not np.all(np.isfinite(cov)) or not np.all(np.isfinite(mean)):
            raise ValidationError("covariance state must be finite")
        if abs(cov[0, 1] - cov[1, 0]) > 1e-12 * max(1.0, np.abs(cov).max()):
            raise ValidationError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        if cov[0, 0] <= 0 or np.linalg.det(cov) <= 0:
            raise ValidationError("covariance must be positive definite")
        if np.linalg.det(cov) < PURE_DET * (1 - DET_TOL):
            raise ValidationError(f"det(cov) = {np.linalg.det(cov)!r} violates the uncertainty bound 1/4")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def det(self):
        return float(np.linalg.det(self.cov))

    def transform(self, s):
        s = np.asarray(s, dtype=float)
        return CovarianceState(s @ self.mean, s @ self.cov @ s.T)


def vacuum_cov():
    return CovarianceState(np.zeros(2), np.diag([VACUUM_VARIANCE, VACUUM_VARIANCE]))


def oat_matrix(lam):
    return np.array([[1.0, 2.0 * lam], [0.0, 1.0]])


def tat_matrix(g):
    c, s = cosh(2.0 * g), sinh(2.0 * g)
    return np.array([[c, s], [s, c]])


def rotation_matrix(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def shear_oat(state, lam):
    """One-axis twisting ``exp(-i lam P^2)`` with ``lam = A_w kappa^2 / 2``."""
    return state.transform(oat_matrix(lam))


def tat_exact(state, g):
    """Two-axis twisting ``exp(-i g (P^2 - X^2))`` with ``g = A_w kappa^2``."""
    return state.transform(tat_matrix(g))


def tat_product_matrix(g, n):
    """Composition of ``n/2`` pairs of shears, each of strength ``mu = 2g/n``.

    A P-pulse ``exp(-i mu P^2)`` shears ``X += 2 mu P``; an X-pulse
    ``exp(+i mu X^2)`` shears ``P += 2 mu X``. Their first-order product is
    the hyperbolic generator, so the composition converges to
    :func:`tat_matrix` with error ``O(1/n)``.
    """
    n = int(n)
    if n < 2 or n % 2:
        raise ValidationError(f"n must be an even positive integer, got {n}")
    pairs = n // 2
    mu = g / pairs
    step = np.array([[1.0, 0.0], [2.0 * mu, 1.0]]) @ np.array([[1.0, 2.0 * mu], [0.0, 1.0]])
    return np.linalg.matrix_power(step, pairs)


def tat_product(state, g, n):
    return state.transform(tat_product_matrix(g, n))


def min_quadrature_variance(state):
    """Smallest quadrature variance and the phase-space angle of that quadrature.

    The angle ``phi`` in ``[0, pi)`` labels ``X cos(phi) + P sin(phi)``; for an
    isotropic covariance the convention is ``phi = 0``.
    """
    vals, vecs = np.linalg.eigh(state.cov)
    if abs(vals[1] - vals[0]) <= 1e-14 * vals[1]:
        return float(vals[0]), 0.0
    v = vecs[:, 0]
    return float(vals[0]), float(np.arctan2(v[1], v[0]) % np.pi)


def xi_sq(state):
    return min_quadrature_variance(state)[0] / VACUUM_VARIANCE


def oat_min_variance_closed_form(lam):
    """``(T - sqrt(T^2 - 1))/2`` with ``T = 1 + 2 lam^2`` for sheared vacuum."""
    t = 1.0 + 2.0 * lam * lam
    # (T - sqrt(T^2-1)) = 1/(T + sqrt(T^2-1)) avoids cancellation at large lam
    return 0.5 / (t + np.sqrt(t * t - 1.0))


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def linear_fit(x, y):
    """Slope, intercept and coefficient of determination of a straight-line fit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def tat_decay_exponent(g_values):
    """Measured ``a`` in ``xi^2_min ~ exp(-a g)`` for the exact hyperbolic flow, with the fit R^2."""
    g = np.asarray(g_values, dtype=float)
    logs = [log(xi_sq(tat_exact(vacuum_cov(), gi))) for gi in g]
    slope, _, r2 = linear_fit(g, logs)
    return -slope, r2


def trotter_errors(g, ns):
    """Spectral-norm distance between product and exact matrices, plus the fitted ``C`` in ``C/n``."""
    exact = tat_matrix(g)
    errs = np.array([np.linalg.norm(tat_product_matrix(g, n) - exact, 2) for n in ns])
    ns = np.asarray(ns, dtype=float)
    c = float(np.dot(errs, 1.0 / ns) / np.dot(1.0 / ns, 1.0 / ns))
    return errs, c
