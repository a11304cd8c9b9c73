"""Protocol builders: QND reference, single- and multi-detection weak-measurement
squeezing, NooN and coherent-state inputs, and lossy detection.

Two routes are offered for most quantities:

* an analytic route in the Holstein-Primakoff (HP) picture built on
  :mod:`wmsqueeze.quadstate`, and
* an exact route through :mod:`wmsqueeze.fockoracle` with a finite number of
  atoms and truncated photon modes.

Phase conventions for the photonic part: ``|phi> = r|0_a 1_b> + t|1_a 0_b>`` is
prepared by a beam splitter acting on ``|1_a 0_b>``; the post-selected state is
``|phi'> = r'|0_a 1_b> - t'|1_a 0_b>``. Splitter amplitudes are signed reals,
sign flips being realised by half-wave plates. Only mode ``b`` passes the atoms.
"""

import enum
from dataclasses import dataclass, field
from math import acos, atan, ceil, isfinite, pi, sqrt

import numpy as np

from . import fockoracle as fo
from . import quadstate as qs
from .errors import (
    CutoffLeakage,
    DomainError,
    NoRealSolution,
    SingularPostSelection,
    ValidationError,
    WeightConstraintViolated,
)
from .report import SqueezingReport

WEIGHT_TOL = 1e-12
SPLITTER_TOL = 1e-12


class ProtocolKind(str, enum.Enum):
    QND = "QND"
    WM_SINGLE = "WM_SINGLE"
    WM_MULTI = "WM_MULTI"
    OAT = "OAT"
    TAT = "TAT"
    NOON = "NOON"
    COHERENT = "COHERENT"


@dataclass(frozen=True)
class WeakValue:
    value: complex

    def __post_init__(self):
        v = complex(self.value)
        if not (isfinite(v.real) and isfinite(v.imag)):
            raise ValidationError(f"weak value must be finite, got {self.value!r}")
        object.__setattr__(self, "value", v)

    @property
    def tilde(self):
        """Shifted weak value ``A_w/2 - 1/4`` that multiplies ``kappa**2 p**2``."""
        return self.value / 2.0 - 0.25

    @property
    def is_real(self):
        return self.value.imag == 0.0

    @property
    def real(self):
        if not self.is_real:
            raise ValidationError(f"expected a real weak value, got {self.value}")
        return self.value.real


@dataclass(frozen=True)
class BeamSplitterPair:
    r: float
    t: float
    r_prime: float
    t_prime: float

    def __post_init__(self):
        for name in ("r", "t", "r_prime", "t_prime"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if abs(self.r**2 + self.t**2 - 1) > SPLITTER_TOL:
            raise ValidationError(f"r^2 + t^2 = {self.r**2 + self.t**2!r} != 1")
        if abs(self.r_prime**2 + self.t_prime**2 - 1) > SPLITTER_TOL:
            raise ValidationError(f"r'^2 + t'^2 = {self.r_prime**2 + self.t_prime**2!r} != 1")

    @property
    def overlap(self):
        """``<phi'|phi> = r r' - t t'``."""
        return self.r * self.r_prime - self.t * self.t_prime

    def weak_value(self):
        """Closed form ``r r'/(r r' - t t') + 1/2``."""
        d = self.overlap
        if abs(d) < fo.SINGULAR_OVERLAP:
            raise SingularPostSelection("r r' = t t': post-selection orthogonal to preparation")
        return WeakValue(self.r * self.r_prime / d + 0.5)

    def prepared(self, layout):
        return fo.photon_state(layout, {(0, 1): self.r, (1, 0): self.t})

    def post_selected(self, layout):
        return fo.photon_state(layout, {(0, 1): self.r_prime, (1, 0): -self.t_prime})

    def as_dict(self):
        return {"r": self.r, "t": self.t, "r_prime": self.r_prime, "t_prime": self.t_prime}


@dataclass(frozen=True)
class ProtocolSpec:
    """Complete description of one protocol run.

    ``weak_value=None`` means "use the optimum" (resolved by the harness);
    ``splitters=None`` means "solve from the weak value" with the balanced
    family ``r = t = 1/sqrt(2)``.
    """

    kind: ProtocolKind
    kappa: float
    n_detections: int = 1
    weights: tuple = (1.0,)
    weak_value: WeakValue = None
    splitters: BeamSplitterPair = None
    splitter_family: str = "balanced"
    detector_inefficiency: float = 0.0
    noon_m: int = 1
    coherent_alpha: float = None
    r0_prime: float = None

    def __post_init__(self):
        kind = ProtocolKind(self.kind)
        object.__setattr__(self, "kind", kind)
        kappa = float(self.kappa)
        if not (isfinite(kappa) and kappa >= 0):
            raise ValidationError(f"kappa must be a nonnegative real, got {self.kappa!r}")
        object.__setattr__(self, "kappa", kappa)
        if isinstance(self.weak_value, (int, float, complex)):
            object.__setattr__(self, "weak_value", WeakValue(self.weak_value))
        n = int(self.n_detections)
        if n < 1:
            raise ValidationError("n_detections must be >= 1")
        weights = tuple(float(w) for w in self.weights)
        if kind is ProtocolKind.WM_MULTI and len(weights) == 1 and n > 1:
            weights = (1.0 / sqrt(n),) * n
        if kind in (ProtocolKind.WM_SINGLE, ProtocolKind.WM_MULTI):
            check_weights(weights)
            if len(weights) != n:
                raise ValidationError(f"{len(weights)} weights given for {n} detections")
        if kind is ProtocolKind.WM_SINGLE and n != 1:
            raise ValidationError("WM_SINGLE has exactly one detection")
        if kind is ProtocolKind.TAT and n > 1 and n % 2:
            raise ValidationError("TAT product formula needs an even number of subpulses")
        eta = float(self.detector_inefficiency)
        if not 0.0 <= eta < 1.0:
            raise ValidationError(f"detector_inefficiency must lie in [0, 1), got {eta}")
        if eta > 0 and kind not in (ProtocolKind.WM_SINGLE, ProtocolKind.WM_MULTI):
            raise ValidationError("detector inefficiency is modelled for WM_SINGLE / WM_MULTI only")
        if int(self.noon_m) < 1:
            raise ValidationError("noon_m must be >= 1")
        if self.noon_m != 1 and kind is not ProtocolKind.NOON:
            raise ValidationError("noon_m is only meaningful for kind NOON")
        if kind is ProtocolKind.COHERENT:
            if self.r0_prime is None:
                raise ValidationError("COHERENT needs r0_prime")
        elif self.r0_prime is not None or self.coherent_alpha is not None:
            raise ValidationError("r0_prime / coherent_alpha are only meaningful for kind COHERENT")
        if kind in (ProtocolKind.OAT, ProtocolKind.TAT) and self.weak_value is None:
            raise ValidationError(f"{kind.value} needs an explicit weak_value magnitude")
        if self.splitter_family not in SPLITTER_FAMILIES:
            raise ValidationError(f"splitter_family must be one of {SPLITTER_FAMILIES}")
        object.__setattr__(self, "n_detections", n)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "detector_inefficiency", eta)
        object.__setattr__(self, "noon_m", int(self.noon_m))


@dataclass(frozen=True)
class OracleSettings:
    n_atoms: int = 200
    photon_cutoff: int = None  # None: grow from an estimate until leakage is below tolerance
    leakage_tol: float = fo.LEAKAGE_TOL
    max_cutoff: int = 400

    def __post_init__(self):
        if int(self.n_atoms) < 2:
            raise ValidationError("oracle n_atoms must be >= 2")
        if self.photon_cutoff is not None and int(self.photon_cutoff) < 2:
            raise ValidationError("photon_cutoff must be >= 2")


@dataclass(frozen=True)
class OracleRun:
    report: SqueezingReport
    atom_state: object  # normalized Dicke vector or density matrix
    photon_cutoff: int
    probabilities: tuple = field(default=())


# --------------------------------------------------------------------------- analytic (HP) route


def xi_s_sq(kappa):
    """Gaussian width factor ``1/(1 + kappa**2/2)`` of the post-selected state."""
    return 1.0 / (1.0 + kappa * kappa / 2.0)


def qnd_xi_sq(kappa):
    return 1.0 / (1.0 + kappa * kappa)


def qnd_reference(kappa):
    """Conditional QND squeezing ``1/(1+kappa**2)``; heralding is deterministic."""
    if kappa < 0:
        raise ValidationError("kappa must be >= 0")
    xi = qnd_xi_sq(kappa)
    return SqueezingReport.build(xi_sq=xi, mean_pa=0.0, success_prob=1.0, qnd_xi_sq=xi)


OPTIMAL_SCALED_FACTOR = 2.0 * (3.0 - sqrt(6.0)) / 3.0


def optimal_weak_value(kappa):
    """Weak value minimizing the single-detection squeezing.

    ``A_w = 4(3 - sqrt 6)/(3 kappa^2) + (15 - 4 sqrt 6)/6``; at this point the
    factor ``Ã_w kappa^2 xi_s^2`` equals ``2(3 - sqrt 6)/3`` independent of kappa.
    """
    if not kappa > 0:
        raise DomainError("optimal weak value needs kappa > 0")
    return WeakValue(4.0 * (3.0 - sqrt(6.0)) / (3.0 * kappa**2) + (15.0 - 4.0 * sqrt(6.0)) / 6.0)


def check_weights(weights):
    w = np.asarray(weights, dtype=float)
    if w.size < 1 or np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise WeightConstraintViolated(f"weights must be positive, got {tuple(weights)}")
    total = float(np.sum(w**2))
    if abs(total - 1.0) > WEIGHT_TOL * max(1, w.size):
        raise WeightConstraintViolated(f"sum of squared weights is {total!r}, expected 1")


def wm_state(kappa, aw):
    """Post-selected atomic state ``(1 - Ã_w kappa^2 p^2) exp(-p^2 / (2 xi_s^2))``."""
    aw = _as_weak_value(aw)
    return qs.apply_quadratic_factor(qs.gaussian_state(xi_s_sq(kappa)), aw.tilde * kappa**2)


def multi_detection_state(kappa, aw, weights):
    """State after ``n`` successful detections: ``prod_j (1 - Ã_w theta_j^2 kappa^2 p^2)`` on the ``xi_s^2`` Gaussian."""
    check_weights(weights)
    aw = _as_weak_value(aw)
    state = qs.gaussian_state(xi_s_sq(kappa))
    for theta in weights:
        state = qs.apply_quadratic_factor(state, aw.tilde * theta**2 * kappa**2)
    return state


def limit_state(kappa, aw):
    """Many-equal-subpulse limit ``exp(-A_w kappa^2 p^2 / 2) exp(-p^2 / 2)``."""
    aw = _as_weak_value(aw)
    width = 1.0 / (1.0 + aw.real * kappa**2)
    if width <= 0:
        raise DomainError("1 + A_w kappa^2 must be positive for a normalizable limit state")
    return qs.gaussian_state(width)


def coherent_analytic_state(kappa, a0, aw_alpha):
    """``(1 - i kappa A0 p - Ã kappa^2 p^2)`` on the ``xi_s^2`` Gaussian, with ``Ã = A/2 - 1/4``."""
    tilde = complex(aw_alpha) / 2.0 - 0.25
    poly = (1.0, -1j * kappa * complex(a0), -tilde * kappa**2)
    return qs.QuadratureState(poly, xi_s_sq(kappa))


def _as_weak_value(aw):
    return aw if isinstance(aw, WeakValue) else WeakValue(aw)


def analytic_report(kappa, state, success_prob=float("nan"), diagnostics=()):
    norm, mean, var = qs.moments(state)
    return SqueezingReport.build(
        xi_sq=var / qs.VACUUM_VARIANCE,
        mean_pa=mean,
        success_prob=success_prob,
        qnd_xi_sq=qnd_xi_sq(kappa),
        diagnostics=diagnostics,
    )


# --------------------------------------------------------------------------- beam splitters

SPLITTER_FAMILIES = ("balanced", "max_probability")


def max_probability_overlap(aw):
    """Largest ``|r r' - t t'|`` among all splitters realising the real weak value ``aw``.

    With ``B = A_w - 1/2`` the constraints are ``cos(a+b) = D`` and
    ``cos(a-b) = (2B - 1) D``, hence ``|D| <= min(1, 1/|2B - 1|)``.
    """
    b = _as_weak_value(aw).real - 0.5
    slope = abs(2.0 * b - 1.0)
    return 1.0 if slope <= 1.0 else 1.0 / slope


def solve_beam_splitters(aw, family="balanced"):
    """Splitter amplitudes realising the real weak value ``aw``.

    ``balanced``: ``r = t = 1/sqrt 2`` and ``(r', t')`` solved (signs free).
    ``max_probability``: the member of the one-parameter family with the
    largest overlap ``|r r' - t t'|``, i.e. the highest heralding probability.
    """
    aw = _as_weak_value(aw)
    if not aw.is_real:
        raise NoRealSolution("complex weak values cannot be realised with real splitters")
    b = aw.real - 0.5
    if abs(b) < 1e-15:
        raise NoRealSolution("A_w = 1/2 requires r r' = 0 (no amplified branch)")
    if family == "balanced":
        norm = sqrt(b * b + (b - 1.0) ** 2)
        r = t = 1.0 / sqrt(2.0)
        return BeamSplitterPair(r, t, b / norm, (b - 1.0) / norm)
    if family == "max_probability":
        d = max_probability_overlap(aw)
        s = acos(max(-1.0, min(1.0, d)))
        dd = acos(max(-1.0, min(1.0, (2.0 * b - 1.0) * d)))
        a_ang, b_ang = (s + dd) / 2.0, (s - dd) / 2.0
        return BeamSplitterPair(np.cos(a_ang), np.sin(a_ang), np.cos(b_ang), np.sin(b_ang))
    raise ValidationError(f"unknown splitter family {family!r}")


def success_probability_hp(kappa, aw, weights, splitters):
    """Heralding probability in the HP picture: ``D^(2n) * int |psi_out|^2 / sqrt(pi)``.

    Exact for the large-N limit (the single-photon amplitude resums to the
    Gaussian-times-quadratic form for every subpulse).
    """
    state = multi_detection_state(kappa, aw, weights)
    d = splitters.overlap
    return d ** (2 * len(weights)) * qs.moments(state)[0] / sqrt(pi)


# --------------------------------------------------------------------------- exact oracle route


def initial_cutoff(kappa, photons=1):
    return max(6, photons + 4) + int(ceil(8.0 * kappa * kappa))


def _grow(cutoff):
    return int(cutoff * 1.25) + 2


def _with_adaptive_cutoff(settings, kappa, photons, build):
    """Call ``build(cutoff)`` growing the photon cutoff until no leakage is signalled."""
    if settings.photon_cutoff is not None:
        return build(int(settings.photon_cutoff))
    cutoff = initial_cutoff(kappa, photons)
    while True:
        try:
            return build(cutoff)
        except CutoffLeakage:
            cutoff = _grow(cutoff)
            if cutoff > settings.max_cutoff:
                raise


def _wm_detection_pure(atom_amps, n_atoms, kappa_j, splitters, cutoff, leakage_tol):
    layout = fo.SpaceLayout(n_atoms, (2, cutoff), ("a", "b"))
    state = fo.product_state(layout, atom_amps, [fo.fock_state(2, 1), fo.fock_state(cutoff, 0)])
    state = fo.beam_splitter_apply(state, splitters.r, splitters.t, ("a", "b"), leakage_tol)
    state = fo.fr_unitary_apply(state, fo.kappa0_from_kappa(kappa_j, n_atoms), "b", leakage_tol)
    atoms, prob = fo.post_select(state, splitters.post_selected(layout))
    return atoms.amps, prob


def _heralding_joint(n_atoms, kappa_j, splitters, cutoff, leakage_tol):
    """Atoms plus modes ``a, b`` right before the detectors (after the second splitter)."""
    layout = fo.SpaceLayout(n_atoms, (cutoff, cutoff), ("a", "b"))
    vac = fo.fock_state(cutoff, 0)
    state = fo.product_state(layout, np.ones(n_atoms + 1), [fo.fock_state(cutoff, 1), vac])
    state = fo.beam_splitter_apply(state, splitters.r, splitters.t, ("a", "b"), leakage_tol)
    state = fo.fr_unitary_apply(state, fo.kappa0_from_kappa(kappa_j, n_atoms), "b", leakage_tol)
    # <0_a 1_b| after this splitter equals <phi'| before it
    return fo.beam_splitter_apply(state, -splitters.t_prime, splitters.r_prime, ("a", "b"), leakage_tol)


def heralding_kraus(n_atoms, kappa_j, splitters, eta_d, cutoff, leakage_tol=fo.LEAKAGE_TOL):
    """Diagonal Kraus amplitudes ``K[k, branch]`` of one lossy heralding event.

    The heralding pattern is PD1 (port a after the second splitter) silent and
    PD2 (port b) registering one photon. A detector of inefficiency ``eta_d``
    fires on ``n`` out of ``n + l`` incident photons with amplitude
    ``sqrt(C(n+l, l)) (1-eta_d)**(n/2) eta_d**(l/2)``; each lost-photon pair
    ``(l_a, l_b)`` is a separate branch. Nothing but the Faraday rotation
    touches the atoms and it is block diagonal in ``J_z``, so the map is
    diagonal in the Dicke index and is obtained by propagating unit amplitude
    on every Dicke level.
    """
    amps = _heralding_joint(n_atoms, kappa_j, splitters, cutoff, leakage_tol).amps
    if eta_d == 0:
        return amps[:, 0, 1][:, None]
    l = np.arange(cutoff + 1)
    fire0 = eta_d ** (l / 2.0)
    fire1 = np.zeros(cutoff + 1)
    fire1[:-1] = np.sqrt(l[:-1] + 1.0) * sqrt(1.0 - eta_d) * eta_d ** (l[:-1] / 2.0)
    branches = amps * fire0[None, :, None]
    branches = branches[:, :, 1:] * fire1[None, None, :-1]
    return branches.reshape(n_atoms + 1, -1)


def heralding_kraus_virtual(n_atoms, kappa_j, splitters, eta_d, cutoff, leakage_tol=fo.LEAKAGE_TOL):
    """Same map as :func:`heralding_kraus` built from explicit loss modes.

    Each detector sits behind a virtual beam splitter of amplitude
    ``sqrt(eta_d)`` into its own loss mode; the loss modes are then traced
    out. Four photon modes make this usable only for small sizes.
    """
    joint = _heralding_joint(n_atoms, kappa_j, splitters, cutoff, leakage_tol)
    layout = fo.SpaceLayout(n_atoms, (cutoff,) * 4, ("a", "b", "la", "lb"))
    vac = np.zeros((cutoff + 1,), dtype=complex)
    vac[0] = 1.0
    state = fo.HilbertState(np.multiply.outer(np.multiply.outer(joint.amps, vac), vac), layout)
    r_loss, t_loss = sqrt(eta_d), sqrt(1.0 - eta_d)
    state = fo.beam_splitter_apply(state, r_loss, t_loss, ("a", "la"), leakage_tol)
    state = fo.beam_splitter_apply(state, r_loss, t_loss, ("b", "lb"), leakage_tol)
    return fo.atomic_branches(fo.project_modes(state, {"a": 0, "b": 1}))


def wm_oracle(kappa, splitters, weights=(1.0,), eta_d=0.0, settings=OracleSettings()):
    """Exact single/multi-detection run; returns an :class:`OracleRun`.

    Detections are applied sequentially with the post-interaction atomic
    state carried forward; the reported success probability is the product of
    the per-detection heralding probabilities.
    """
    check_weights(weights)
    n_atoms = settings.n_atoms

    def build(cutoff):
        probs = []
        if eta_d == 0:
            amps = fo.css_amplitudes(n_atoms).astype(complex)
            for theta in weights:
                amps, p = _wm_detection_pure(amps, n_atoms, theta * kappa, splitters, cutoff, settings.leakage_tol)
                probs.append(p)
            atom = amps
        else:
            c = fo.css_amplitudes(n_atoms)
            rho = np.outer(c, c).astype(complex)
            for theta in weights:
                k = heralding_kraus(n_atoms, theta * kappa, splitters, eta_d, cutoff, settings.leakage_tol)
                new = rho * (k @ k.conj().T)
                p = float(np.real(np.trace(new)) / np.real(np.trace(rho)))
                if p < fo.ZERO_PROBABILITY:
                    raise fo.ZeroProbability(f"heralding probability {p:.3e}")
                probs.append(p)
                rho = new / np.real(np.trace(new))
            atom = rho
        report = fo.spin_squeezing_report(n_atoms, atom, float(np.prod(probs)), qnd_xi_sq(kappa))
        return OracleRun(report, atom, cutoff, tuple(probs))

    return _with_adaptive_cutoff(settings, kappa, 1, build)


def success_probability(spec, settings=OracleSettings()):
    """Exact heralding probability of a WM / NooN / coherent spec via the oracle."""
    return run_oracle(spec, settings).report.success_prob


def qnd_oracle(kappa, settings=OracleSettings(), grid=None, branch_x=0.0):
    """Homodyne QND baseline on the exact space.

    Returns a dict with the report of the ``x_L = branch_x`` branch (nearest
    grid point), the outcome-averaged conditional squeezing over the grid and
    the conditional mean at a nonzero outcome (``x_L = 1``).
    """
    n_atoms = settings.n_atoms
    grid = fo.homodyne_grid() if grid is None else np.asarray(grid, dtype=float)

    def build(cutoff):
        layout = fo.SpaceLayout(n_atoms, (cutoff,), ("L",))
        state = fo.product_state(layout, fo.css_amplitudes(n_atoms), [fo.fock_state(cutoff, 0)])
        state = fo.fr_unitary_apply(state, fo.kappa0_from_kappa(kappa, n_atoms), "L", settings.leakage_tol)
        rows = fo.homodyne_amplitudes(state, "L", grid)
        return rows, cutoff

    rows, cutoff = _with_adaptive_cutoff(settings, kappa, 0, build)
    weights = np.sum(np.abs(rows) ** 2, axis=1)
    xis, means = [], []
    for row in rows:
        _, mean, var = fo.spin_moments(n_atoms, row)
        xis.append(var / (n_atoms / 4.0))
        means.append(mean / sqrt(n_atoms / 2.0))
    xis = np.array(xis)
    i0 = int(np.argmin(np.abs(grid - branch_x)))
    i1 = int(np.argmin(np.abs(grid - 1.0)))
    branch = SqueezingReport.build(
        xi_sq=xis[i0], mean_pa=means[i0], success_prob=1.0, qnd_xi_sq=qnd_xi_sq(kappa)
    )
    return {
        "branch": branch,
        "averaged_xi_sq": float(np.dot(weights, xis) / np.sum(weights)),
        "mean_pa_at_x1": float(means[i1]),
        "photon_cutoff": cutoff,
    }


# --------------------------------------------------------------------------- NooN input


def noon_states(layout, m, splitters):
    phi = fo.photon_state(layout, {(0, m): splitters.r, (m, 0): splitters.t})
    phi_p = fo.photon_state(layout, {(0, m): splitters.r_prime, (m, 0): -splitters.t_prime})
    return phi, phi_p


def noon_weak_value(m, splitters, cutoff=None):
    """``<phi'|P_b^2|phi>/<phi'|phi>`` for NooN pre- and post-selection, by dense matrices."""
    if m < 1:
        raise ValidationError("m must be >= 1")
    cutoff = m + 2 if cutoff is None else cutoff
    if cutoff < m + 2:
        raise ValidationError("Fock cutoff must be >= m + 2")
    layout = fo.SpaceLayout(0, (cutoff, cutoff), ("a", "b"))
    phi, phi_p = noon_states(layout, m, splitters)
    _, p, _ = fo.build_mode_ops(cutoff)
    pb = fo.mode_operator(layout, p, "b")
    return fo.weak_value_oracle(phi, phi_p, pb, power=2)


def noon_splitters(target_aw, m, family="balanced"):
    """Splitters whose ``m``-photon NooN weak value ``2 m Ã_w + 1/2`` equals ``target_aw``.

    The NooN weak value is ``m r r'/(r r' - t t') + 1/2``, so the equivalent
    single-photon weak value is ``(target - 1/2)/m + 1/2``.
    """
    target = _as_weak_value(target_aw).real
    return solve_beam_splitters((target - 0.5) / m + 0.5, family)


def noon_oracle(kappa, m, splitters, settings=OracleSettings()):
    n_atoms = settings.n_atoms

    def build(cutoff):
        layout = fo.SpaceLayout(n_atoms, (m + 2, cutoff), ("a", "b"))
        phi, phi_p = noon_states(layout, m, splitters)
        state = fo.HilbertState(np.multiply.outer(fo.css_amplitudes(n_atoms), phi.amps[0]), layout)
        state = fo.fr_unitary_apply(state, fo.kappa0_from_kappa(kappa, n_atoms), "b", settings.leakage_tol)
        atoms, prob = fo.post_select(state, phi_p)
        rep = fo.spin_squeezing_report(n_atoms, atoms, prob, qnd_xi_sq(kappa))
        return OracleRun(rep, atoms.amps, cutoff, (prob,))

    return _with_adaptive_cutoff(settings, kappa, m, build)


# --------------------------------------------------------------------------- coherent input


def coherent_params(r0_prime):
    """Closed-form special point for coherent-state input with balanced first splitter.

    Returns ``(alpha, A0, A_w_alpha)`` with ``alpha = sqrt(2 (r0' + 1))``,
    ``A0 = i (r0' - alpha^2/2 + 1)/alpha`` (zero at this alpha) and
    ``A_w_alpha = (1 - i alpha A0 - 2 r0'/alpha^2)/2 = 1/(2 (r0' + 1))``.
    The exact second-order coefficient differs; see :func:`coherent_weak_values`.
    """
    r0 = float(r0_prime)
    if not r0 > -1.0:
        raise DomainError(f"r0' must exceed -1 for a real amplitude, got {r0}")
    alpha = sqrt(2.0 * (r0 + 1.0))
    a0 = 1j * (r0 - alpha**2 / 2.0 + 1.0) / alpha
    aw_alpha = (1.0 - 1j * alpha * a0 - 2.0 * r0 / alpha**2) / 2.0
    return alpha, complex(a0), complex(aw_alpha)


def coherent_weak_values(alpha, r0_prime):
    """Exact ``(<P_b>_w, <P_b^2>_w)`` for coherent input ``|alpha/sqrt2>_a |alpha/sqrt2>_b``.

    Derived by normal ordering against the post-selected two-photon state of
    :func:`coherent_post_selected`:
    ``<P>_w = i (r0' + 1 - alpha^2/2)/alpha`` and
    ``<P^2>_w = (3 + 2 r0' - alpha^2/2 - 2 r0'/alpha^2)/2``.
    """
    r0 = float(r0_prime)
    a0 = 1j * (r0 + 1.0 - alpha**2 / 2.0) / alpha
    a2 = (3.0 + 2.0 * r0 - alpha**2 / 2.0 - 2.0 * r0 / alpha**2) / 2.0
    return complex(a0), complex(a2)


def coherent_post_selection_angles(r0_prime):
    """``(r', t')`` with ``2 r' t'/(t'^2 - r'^2) = r0'`` and ``t'^2 > r'^2`` is not required; ``|2phi| < pi/2``."""
    phi = -0.5 * atan(float(r0_prime))
    return float(np.cos(phi)), float(np.sin(phi))


def coherent_post_selected(layout, r_prime, t_prime):
    """``sqrt2 r' t' (|0_a 2_b> - |2_a 0_b>) + (t'^2 - r'^2) |1_a 1_b>``.

    The two-photon terms carry the port-b-first ordering; with this phase
    convention ``A0`` vanishes at ``alpha = sqrt(2 (r0' + 1))``.
    """
    c = sqrt(2.0) * r_prime * t_prime
    return fo.photon_state(layout, {(0, 2): c, (2, 0): -c, (1, 1): t_prime**2 - r_prime**2})


def coherent_oracle(kappa, r0_prime, alpha=None, settings=OracleSettings()):
    n_atoms = settings.n_atoms
    if alpha is None:
        alpha = coherent_params(r0_prime)[0]
    rp, tp = coherent_post_selection_angles(r0_prime)
    beta = alpha / sqrt(2.0)
    base = 3 + int(ceil(alpha**2 + 5 * alpha))

    def build(cutoff):
        layout = fo.SpaceLayout(n_atoms, (base, cutoff), ("a", "b"))
        state = fo.product_state(
            layout,
            fo.css_amplitudes(n_atoms),
            [fo.coherent_amplitudes(base, beta), fo.coherent_amplitudes(cutoff, beta)],
        )
        state = fo.fr_unitary_apply(state, fo.kappa0_from_kappa(kappa, n_atoms), "b", settings.leakage_tol)
        atoms, prob = fo.post_select(state, coherent_post_selected(layout, rp, tp))
        rep = fo.spin_squeezing_report(n_atoms, atoms, prob, qnd_xi_sq(kappa))
        return OracleRun(rep, atoms.amps, cutoff, (prob,))

    return _with_adaptive_cutoff(settings, kappa, base, build)


def coherent_state_run(spec, settings=OracleSettings()):
    if spec.kind is not ProtocolKind.COHERENT:
        raise ValidationError("coherent_state_run needs a COHERENT spec")
    return coherent_oracle(spec.kappa, spec.r0_prime, spec.coherent_alpha, settings).report


def detector_inefficiency_run(spec, settings=OracleSettings()):
    """Exact lossy-detector run; ``eta_d = 0`` reduces to the ideal heralded run."""
    if spec.kind not in (ProtocolKind.WM_SINGLE, ProtocolKind.WM_MULTI):
        raise ValidationError("detector model applies to WM_SINGLE / WM_MULTI")
    splitters = resolve_splitters(spec)
    return wm_oracle(spec.kappa, splitters, spec.weights, spec.detector_inefficiency, settings).report


# --------------------------------------------------------------------------- dispatch


def resolve_splitters(spec, aw=None):
    if spec.splitters is not None:
        return spec.splitters
    aw = spec.weak_value if aw is None else aw
    if aw is None:
        raise ValidationError("weak value must be resolved before solving splitters")
    if spec.kind is ProtocolKind.NOON:
        return noon_splitters(aw, spec.noon_m, spec.splitter_family)
    return solve_beam_splitters(aw, spec.splitter_family)


def effective_weak_value(spec):
    """Weak value entering the analytic state (splitters take precedence over ``weak_value``)."""
    if spec.kind is ProtocolKind.NOON and spec.splitters is not None:
        return WeakValue(noon_weak_value(spec.noon_m, spec.splitters))
    if spec.splitters is not None:
        return spec.splitters.weak_value()
    return spec.weak_value


def run_oracle(spec, settings=OracleSettings()):
    """Exact-oracle run of a WM / NooN / coherent / QND spec (``OracleRun``; QND returns the x=0 branch)."""
    kind = spec.kind
    if kind is ProtocolKind.QND:
        res = qnd_oracle(spec.kappa, settings)
        return OracleRun(res["branch"], None, res["photon_cutoff"])
    if kind in (ProtocolKind.WM_SINGLE, ProtocolKind.WM_MULTI):
        return wm_oracle(spec.kappa, resolve_splitters(spec), spec.weights, spec.detector_inefficiency, settings)
    if kind is ProtocolKind.NOON:
        return noon_oracle(spec.kappa, spec.noon_m, resolve_splitters(spec), settings)
    if kind is ProtocolKind.COHERENT:
        return coherent_oracle(spec.kappa, spec.r0_prime, spec.coherent_alpha, settings)
    raise ValidationError(f"no oracle route for {kind.value}")
