"""Derivative-free optimizers for the protocol parameters and the small-coupling bound.

* :func:`minimize_scalar` is a golden-section search (optional grid pre-scan)
  used for the weak value;
* :func:`minimize_on_weight_sphere` runs Nelder-Mead over hyperspherical
  angles so that ``sum_j theta_j^2 = 1`` holds by construction;
* :func:`enhancement_limit` is the small-coupling bound: the smallest
  eigenvalue of ``P^2`` restricted to ``span{|0>, |2>, ..., |2n>}``.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import log10, sqrt

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import minimize

from . import protocols as pr
from . import quadstate as qs
from .errors import BudgetExhausted, ValidationError, ZeroProbability

GOLDEN = (sqrt(5.0) - 1.0) / 2.0
DEFAULT_BUDGET = 2000
DEFAULT_RESTARTS = 8
DEFAULT_SEED = 20240611
# scaled factor c' = Ã_w kappa^2 xi_s^2 searched over [0, C_MAX]; the single
# detection ratio has its only interior minimum well inside this window
C_MAX = 3.0


@dataclass(frozen=True)
class OptimizationResult:
    best_params: tuple
    best_value: float
    evaluations: int
    converged: bool
    tolerance_achieved: float


class _Counted:
    def __init__(self, fn, budget):
        self.fn = fn
        self.budget = budget
        self.calls = 0

    def __call__(self, x):
        if self.calls >= self.budget:
            raise BudgetExhausted(f"objective budget of {self.budget} evaluations exhausted")
        self.calls += 1
        return float(self.fn(x))


def minimize_scalar(objective, bracket, tol=1e-8, grid=0, budget=DEFAULT_BUDGET):
    """Golden-section minimization on ``bracket``.

    With ``grid > 0`` the objective is first sampled on ``grid`` evenly spaced
    points and the search is restricted to the two cells around the best
    sample, which guards against a secondary extremum in the bracket.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or not hi > lo:
        raise ValidationError(f"bracket must be a nondegenerate interval, got {bracket!r}")
    if not tol > 0:
        raise ValidationError("tol must be positive")
    f = _Counted(objective, budget)
    if grid:
        xs = np.linspace(lo, hi, int(grid))
        vals = [f(x) for x in xs]
        i = int(np.argmin(vals))
        lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x = c if fc <= fd else d
    best = fc if fc <= fd else fd
    return OptimizationResult((float(x),), float(best), f.calls, True, float(b - a))


def angles_to_weights(angles):
    """Hyperspherical map ``(a_1..a_{n-1}) -> (theta_1..theta_n)`` with unit norm and nonnegative entries."""
    angles = np.asarray(angles, dtype=float)
    n = angles.size + 1
    w = np.empty(n)
    s = 1.0
    for j, a in enumerate(angles):
        w[j] = s * abs(np.cos(a))
        s *= abs(np.sin(a))
    w[n - 1] = s
    return w


def canonical_weights(weights):
    """Descending order, strictly positive, unit norm (optima are permutation symmetric)."""
    w = np.sort(np.maximum(np.abs(np.asarray(weights, dtype=float)), 1e-12))[::-1]
    return w / np.sqrt(np.sum(w**2))


def minimize_on_weight_sphere(objective, n, tol=1e-10, restarts=DEFAULT_RESTARTS, seed=DEFAULT_SEED, budget=20000):
    """Minimize ``objective(weights)`` over positive unit vectors of length ``n``.

    Nelder-Mead runs from ``restarts`` deterministic starts (the first is the
    equal-weight point); the best result under the total ordering
    ``(value, params)`` is returned with weights in descending order.
    """
    n = int(n)
    if n < 2:
        raise ValidationError("weight-sphere optimization needs n >= 2")
    rng = np.random.default_rng(seed)
    f = _Counted(lambda ang: objective(canonical_weights(angles_to_weights(ang))), budget)
    equal = np.array([np.arccos(1.0 / sqrt(n - j)) for j in range(n - 1)])
    starts = [equal] + [rng.uniform(0.05, np.pi / 2 - 0.05, n - 1) for _ in range(restarts - 1)]
    results = []
    for x0 in starts:
        res = minimize(
            f,
            x0,
            method="Nelder-Mead",
            options={"xatol": tol, "fatol": tol * 1e-2, "maxfev": 4000, "adaptive": False},
        )
        w = canonical_weights(angles_to_weights(res.x))
        results.append((float(res.fun), tuple(float(v) for v in w), bool(res.success)))
    value, params, ok = min(results)
    converged = any(r[2] for r in results)
    if not converged:
        raise BudgetExhausted("no Nelder-Mead restart converged within its evaluation budget")
    return OptimizationResult(params, value, f.calls, ok, tol)


# --------------------------------------------------------------------------- protocol helpers


def weak_value_bracket(kappa):
    """A_w interval mapping to ``c' = Ã_w kappa^2 xi_s^2`` in ``[0, C_MAX]``."""
    scale = kappa * kappa * pr.xi_s_sq(kappa)
    return 0.5, 0.5 + 2.0 * C_MAX / scale


def optimize_single_detection(kappa, tol=None):
    """Minimize the analytic single-detection squeezing over the weak value."""
    if not kappa > 0:
        raise ValidationError("kappa must be positive")
    lo, hi = weak_value_bracket(kappa)
    tol = (hi - lo) * 1e-10 if tol is None else tol
    return minimize_scalar(lambda aw: qs.squeezing_parameter(pr.wm_state(kappa, aw)), (lo, hi), tol, grid=61)


def optimize_weak_value_for_weights(kappa, weights, tol=None):
    lo, hi = weak_value_bracket(kappa)
    tol = (hi - lo) * 1e-10 if tol is None else tol
    w = tuple(weights)
    return minimize_scalar(
        lambda aw: qs.squeezing_parameter(pr.multi_detection_state(kappa, aw, w)), (lo, hi), tol, grid=61
    )


def _scaled_ratio(c_total, weights):
    """``xi^2 / xi_s^2`` in the scaled variable ``u = p / xi_s`` (independent of kappa)."""
    state = qs.make_vacuum()
    for theta in weights:
        state = qs.apply_quadratic_factor(state, c_total * theta * theta)
    return qs.squeezing_parameter(state)


def _product_coefficients(log_c):
    return np.exp(np.asarray(log_c, dtype=float))


@lru_cache(maxsize=None)
def scaled_multi_optimum(n, restarts=DEFAULT_RESTARTS, seed=DEFAULT_SEED):
    """Optimal ``(c', weights, ratio, evaluations)`` for ``n`` detections in scaled form.

    With ``c' = Ã_w kappa^2 xi_s^2`` the state in ``u = p/xi_s`` is
    ``prod_j (1 - c_j u^2) exp(-u^2/2)`` with ``c_j = c' theta_j^2``. Any
    positive vector ``c_j`` corresponds to exactly one ``(c', theta)`` on the
    weight sphere (``c' = sum c_j``), so the search runs unconstrained over
    ``log c_j``. Neither the optimal ratio ``xi^2/xi_s^2`` nor the weights
    depend on kappa.
    """
    n = int(n)
    if n < 1:
        raise ValidationError("n must be >= 1")
    if n == 1:
        res = minimize_scalar(lambda c: _scaled_ratio(c, (1.0,)), (0.0, C_MAX), 1e-12, grid=61)
        return res.best_params[0], (1.0,), res.best_value, res.evaluations
    prev_c, prev_w, _, _ = scaled_multi_optimum(n - 1, restarts, seed)
    warm = np.log(np.append(prev_c * np.square(prev_w), 0.05))
    rng = np.random.default_rng(seed + n)
    starts = [warm] + [np.log(rng.uniform(0.02, 1.0, n)) for _ in range(restarts - 1)]
    f = _Counted(lambda x: _scaled_ratio(1.0, np.sqrt(_product_coefficients(x))), 200000)
    results = []
    for x0 in starts:
        res = minimize(
            f, x0, method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-13, "maxfev": 20000, "adaptive": True},
        )
        c = np.sort(_product_coefficients(res.x))[::-1]
        results.append((float(res.fun), tuple(float(v) for v in c), bool(res.success)))
    value, c_j, _ = min(results)
    if not any(r[2] for r in results):
        raise BudgetExhausted("no Nelder-Mead restart converged within its evaluation budget")
    total = float(sum(c_j))
    weights = tuple(float(np.sqrt(cj / total)) for cj in c_j)
    return total, weights, value, f.calls


def weak_value_from_scaled(kappa, c_prime):
    return 2.0 * c_prime / (kappa * kappa * pr.xi_s_sq(kappa)) + 0.5


def optimize_multi_detection(kappa, n, restarts=DEFAULT_RESTARTS, seed=DEFAULT_SEED, method="scaled"):
    """Joint optimization over the weak value and the subpulse weights.

    ``method="scaled"`` optimizes once in the kappa-free variables and maps
    back; ``method="direct"`` runs the nested search on the physical weak
    value at this kappa. Returns ``best_params = (A_w, theta_1, ..., theta_n)``
    with weights in descending order.
    """
    n = int(n)
    if not kappa > 0:
        raise ValidationError("kappa must be positive")
    if method == "scaled":
        c, weights, _, evals = scaled_multi_optimum(n, restarts, seed)
        aw = weak_value_from_scaled(kappa, c)
        value = qs.squeezing_parameter(pr.multi_detection_state(kappa, aw, weights))
        return OptimizationResult((aw,) + tuple(weights), value, evals, True, 1e-8)
    if method != "direct":
        raise ValidationError(f"unknown method {method!r}")
    if n == 1:
        res = optimize_single_detection(kappa)
        return OptimizationResult((res.best_params[0], 1.0), res.best_value, res.evaluations, True, res.tolerance_achieved)
    inner_calls = [0]

    def outer(weights):
        r = optimize_weak_value_for_weights(kappa, weights)
        inner_calls[0] += r.evaluations
        return r.best_value

    res = minimize_on_weight_sphere(outer, n, tol=1e-7, restarts=restarts, seed=seed, budget=50000)
    aw = optimize_weak_value_for_weights(kappa, res.best_params).best_params[0]
    value = qs.squeezing_parameter(pr.multi_detection_state(kappa, aw, res.best_params))
    return OptimizationResult((aw,) + tuple(res.best_params), value, res.evaluations + inner_calls[0], res.converged, res.tolerance_achieved)


def p_squared_even_block(n):
    """Diagonal and off-diagonal of ``P^2`` on ``{|0>, |2>, ..., |2n>}``."""
    k = np.arange(n + 1)
    diag = 2.0 * k + 0.5
    off = -0.5 * np.sqrt((2.0 * k[:-1] + 1.0) * (2.0 * k[:-1] + 2.0))
    return diag, off


def spectral_bound(n):
    """``(lambda_min, eigenvector)`` of ``P^2`` restricted to the even states up to ``|2n>``."""
    if int(n) < 1:
        raise ValidationError("n must be >= 1")
    diag, off = p_squared_even_block(int(n))
    vals, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
    v = vecs[:, 0]
    return float(vals[0]), v * np.sign(v[0])


def enhancement_limit(n):
    """Small-coupling bound on the n-detection enhancement in dB: ``-10 log10(2 lambda_min)``."""
    lam, _ = spectral_bound(n)
    return -10.0 * log10(2.0 * lam)


def optimize_lossy_weak_value(kappa, weights, eta_d, settings=None, grid=25, tol=1e-4):
    """Weak value minimizing the exact heralded squeezing with detector inefficiency ``eta_d``.

    Searched over ``log(A_w - 1/2)`` on the same window as the lossless
    problem; points where heralding has vanishing probability count as +inf.
    """
    settings = settings or pr.OracleSettings()
    lo, hi = weak_value_bracket(kappa)
    weights = tuple(weights)

    def objective(x):
        aw = 0.5 + float(np.exp(x))
        try:
            return pr.wm_oracle(kappa, pr.solve_beam_splitters(aw), weights, eta_d, settings).report.xi_sq
        except ZeroProbability:
            return float("inf")

    res = minimize_scalar(objective, (np.log(1e-2), np.log(hi - lo)), tol, grid=grid)
    aw = 0.5 + float(np.exp(res.best_params[0]))
    return OptimizationResult((aw,), res.best_value, res.evaluations, res.converged, res.tolerance_achieved)
