"""Pure Holstein-Primakoff states of the form ``Q(p) * exp(-p**2 / (2 s**2))``.

The atomic mode is described in the momentum representation. A state is an
unnormalized complex polynomial ``Q`` times a Gaussian envelope of width
parameter ``s**2`` (the vacuum has ``s**2 = 1``). Every observable needed here
is a finite sum of Gaussian moments, so norms, means and variances are exact
up to rounding.

Conventions: ``X = (a + a^dag)/sqrt(2)``, ``P = -i (a - a^dag)/sqrt(2)`` so the
vacuum has ``Var(P) = 1/2`` and the number states in the momentum
representation are ``<p|n> = (-i)**n * h_n(p)`` with ``h_n`` the Hermite
functions.
"""

from dataclasses import dataclass
from math import pi, sqrt

import numpy as np

from .errors import DegreeTooLarge, TruncationError, ValidationError

MAX_DEGREE = 256
MAX_MOMENT_ORDER = 160
FOCK_TAIL_TOL = 1e-10
VACUUM_VARIANCE = 0.5


@dataclass(frozen=True)
class QuadratureState:
    """Unnormalized pure state ``psi(p) = sum_k poly_coeffs[k] p**k * exp(-p**2/(2*width_sq))``."""

    poly_coeffs: tuple
    width_sq: float = 1.0

    def __post_init__(self):
        coeffs = tuple(complex(c) for c in self.poly_coeffs)
        if not coeffs or not any(c != 0 for c in coeffs):
            raise ValidationError("polynomial must not vanish identically")
        if not all(np.isfinite(c.real) and np.isfinite(c.imag) for c in coeffs):
            raise ValidationError("polynomial coefficients must be finite")
        # strip trailing zeros so degree is meaningful
        while len(coeffs) > 1 and coeffs[-1] == 0:
            coeffs = coeffs[:-1]
        if len(coeffs) - 1 > MAX_DEGREE:
            raise DegreeTooLarge(f"degree {len(coeffs) - 1} exceeds {MAX_DEGREE}")
        width_sq = float(self.width_sq)
        if not (np.isfinite(width_sq) and width_sq > 0):
            raise ValidationError(f"width_sq must be positive, got {self.width_sq!r}")
        object.__setattr__(self, "poly_coeffs", coeffs)
        object.__setattr__(self, "width_sq", width_sq)

    @property
    def degree(self):
        return len(self.poly_coeffs) - 1

    @property
    def is_even(self):
        return all(c == 0 for c in self.poly_coeffs[1::2])

    def coeff_array(self):
        return np.array(self.poly_coeffs, dtype=complex)

    def __call__(self, p):
        """Evaluate the (unnormalized) wavefunction on an array of momenta."""
        p = np.asarray(p, dtype=float)
        q = np.polynomial.polynomial.polyval(p, self.coeff_array())
        return q * np.exp(-(p**2) / (2.0 * self.width_sq))


@dataclass(frozen=True)
class FockAmplitudes:
    amps: np.ndarray
    cutoff: int
    truncation_error: float

    def probabilities(self):
        return np.abs(self.amps) ** 2


def make_vacuum():
    return QuadratureState((1.0,), 1.0)


def gaussian_state(width_sq):
    return QuadratureState((1.0,), width_sq)


def _half_integer_gammas(count):
    """Gamma(k + 1/2) for k = 0..count-1 by upward recurrence from sqrt(pi)."""
    if count > MAX_MOMENT_ORDER + 1:
        raise DegreeTooLarge(f"moment order {count - 1} exceeds {MAX_MOMENT_ORDER}")
    out = np.empty(count)
    g = sqrt(pi)
    for k in range(count):
        out[k] = g
        g *= k + 0.5
    return out


def gaussian_moment(k, s_sq):
    """Raw even moment ``int p**(2k) exp(-p**2/s_sq) dp = s**(2k+1) Gamma(k+1/2)``."""
    if k < 0 or int(k) != k:
        raise ValidationError(f"moment order must be a nonnegative integer, got {k!r}")
    if not s_sq > 0:
        raise ValidationError(f"s_sq must be positive, got {s_sq!r}")
    k = int(k)
    gam = _half_integer_gammas(k + 1)[k]
    value = s_sq ** (k + 0.5) * gam
    if not np.isfinite(value):
        raise DegreeTooLarge(f"moment of order {k} overflows at s_sq={s_sq}")
    return value


def apply_quadratic_factor(state, c):
    """Multiply the polynomial by ``(1 - c p**2)``; the envelope is untouched."""
    poly = np.convolve(state.coeff_array(), np.array([1.0, 0.0, -complex(c)]))
    return QuadratureState(tuple(poly), state.width_sq)


def apply_polynomial(state, coeffs):
    """Multiply the polynomial part by an arbitrary polynomial (ascending coefficients)."""
    poly = np.convolve(state.coeff_array(), np.asarray(coeffs, dtype=complex))
    return QuadratureState(tuple(poly), state.width_sq)


def _density_coeffs(state):
    """Coefficients of ``|Q(s u)|**2`` in the scaled variable ``u = p / s``."""
    s = sqrt(state.width_sq)
    q = state.coeff_array() * s ** np.arange(state.degree + 1)
    # |Q|^2 is real on the real axis, so the imaginary part is rounding noise
    return np.convolve(q, np.conj(q)).real


def moments(state):
    """Return ``(norm_sq, mean_p, var_p)`` of the momentum distribution.

    All three are exact finite sums over Gaussian moments. The computation
    runs in the scaled variable ``u = p/s`` (unit-width weight) and is mapped
    back, which keeps the moment table well inside floating-point range.
    """
    w = _density_coeffs(state)
    gam = _half_integer_gammas(len(w) // 2 + 2)
    even = w[0::2]
    odd = w[1::2]
    norm_u = float(np.dot(even, gam[: len(even)]))
    first_u = float(np.dot(odd, gam[1 : len(odd) + 1]))
    second_u = float(np.dot(even, gam[1 : len(even) + 1]))
    mean_u = first_u / norm_u
    var_u = second_u / norm_u - mean_u**2
    s = sqrt(state.width_sq)
    return s * norm_u, s * mean_u, state.width_sq * var_u


def squeezing_parameter(state):
    """Momentum variance relative to the vacuum (coherent-spin-state) value 1/2."""
    return moments(state)[2] / VACUUM_VARIANCE


def hermite_functions(n_max, x):
    """Normalized Hermite functions ``h_0..h_{n_max}`` on the points ``x`` (shape ``(n_max+1, len(x))``)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1, x.size))
    out[0] = pi**-0.25 * np.exp(-(x**2) / 2.0)
    if n_max >= 1:
        out[1] = sqrt(2.0) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = sqrt(2.0 / (n + 1)) * x * out[n] - sqrt(n / (n + 1)) * out[n - 1]
    return out


def quadrature_grid(width_sq, cutoff, points=4001):
    """Uniform grid wide enough for both the state envelope and ``h_cutoff``."""
    half = max(12.0 * sqrt(width_sq), 12.0, sqrt(2.0 * cutoff + 1.0) + 10.0)
    n = max(points, int(8 * half * sqrt(2.0 * cutoff + 1.0)) | 1)
    return np.linspace(-half, half, n)


def to_fock_even(state, cutoff, tol=FOCK_TAIL_TOL, points=4001):
    """Number-state amplitudes ``<n|psi>`` for ``n = 0..cutoff`` of an even state.

    Overlaps are taken against Hermite functions on a uniform grid (trapezoid
    rule, spectrally accurate for these integrands). The result is normalized
    with the exact analytic norm; the weight not captured below the cutoff is
    reported as ``truncation_error``.
    """
    if not state.is_even:
        raise ValidationError("to_fock_even requires an even polynomial")
    if cutoff % 2 or cutoff < state.degree + 4:
        raise ValidationError(
            f"cutoff must be even and >= degree + 4 = {state.degree + 4}, got {cutoff}"
        )
    grid = quadrature_grid(state.width_sq, cutoff, points)
    psi = state(grid)
    h = hermite_functions(cutoff, grid)
    raw = np.trapezoid(h * psi[None, :], grid, axis=1)
    phases = (1j) ** np.arange(cutoff + 1)  # conj((-i)**n)
    amps = phases * raw / sqrt(moments(state)[0])
    amps[1::2] = 0.0
    tail = max(0.0, 1.0 - float(np.sum(np.abs(amps) ** 2)))
    if tail > tol:
        raise TruncationError(f"tail weight {tail:.3e} beyond cutoff {cutoff} exceeds {tol:.1e}")
    return FockAmplitudes(amps=amps, cutoff=cutoff, truncation_error=tail)
