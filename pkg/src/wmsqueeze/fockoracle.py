"""Exact simulator on a truncated Hilbert space: collective spin (Dicke basis)
tensored with photon Fock modes.

States are dense complex tensors of shape ``(n_atoms + 1, d_0, d_1, ...)`` with
``d_i = cutoff_i + 1``. The Dicke index ``k`` labels ``J_z = k - n_atoms/2``,
which makes the Faraday-rotation unitary block diagonal in the leading axis.
No weak-coupling expansion is made anywhere in this module.
"""

from dataclasses import dataclass
from math import atan2, lgamma, log, sqrt

import numpy as np
from scipy.linalg import expm

from .errors import (
    CutoffLeakage,
    SingularPostSelection,
    ValidationError,
    ZeroProbability,
)
from .quadstate import hermite_functions
from .report import SqueezingReport

MAX_DIMENSION = 20_000_000
LEAKAGE_TOL = 1e-8
GUARD_LEVELS = 2
ZERO_PROBABILITY = 1e-30
SINGULAR_OVERLAP = 1e-14


@dataclass(frozen=True)
class SpaceLayout:
    """Dicke factor of ``n_atoms`` spins (dimension ``n_atoms + 1``) times photon modes.

    ``n_atoms == 0`` describes a photon-only space.
    """

    n_atoms: int
    mode_cutoffs: tuple
    mode_labels: tuple = ()

    def __post_init__(self):
        cutoffs = tuple(int(c) for c in self.mode_cutoffs)
        if self.n_atoms < 0:
            raise ValidationError("n_atoms must be nonnegative")
        if any(c < 2 for c in cutoffs):
            raise ValidationError(f"mode cutoffs must be >= 2, got {cutoffs}")
        labels = tuple(self.mode_labels) or tuple(f"m{i}" for i in range(len(cutoffs)))
        if len(labels) != len(cutoffs):
            raise ValidationError("one label per mode required")
        object.__setattr__(self, "mode_cutoffs", cutoffs)
        object.__setattr__(self, "mode_labels", labels)
        if self.dimension > MAX_DIMENSION:
            raise ValidationError(f"joint dimension {self.dimension} exceeds {MAX_DIMENSION}")

    @property
    def shape(self):
        return (self.n_atoms + 1,) + tuple(c + 1 for c in self.mode_cutoffs)

    @property
    def dimension(self):
        return int(np.prod(self.shape))

    def mode(self, label_or_index):
        if isinstance(label_or_index, str):
            return self.mode_labels.index(label_or_index)
        return int(label_or_index)

    def photon_layout(self):
        return SpaceLayout(0, self.mode_cutoffs, self.mode_labels)

    def with_modes(self, cutoffs, labels):
        return SpaceLayout(self.n_atoms, self.mode_cutoffs + tuple(cutoffs), self.mode_labels + tuple(labels))


@dataclass(frozen=True)
class HilbertState:
    amps: np.ndarray
    layout: SpaceLayout

    def __post_init__(self):
        amps = np.asarray(self.amps, dtype=complex).reshape(self.layout.shape)
        if not np.all(np.isfinite(amps)):
            raise ValidationError("state amplitudes must be finite")
        amps = amps.copy()
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)

    @property
    def vector(self):
        return self.amps.reshape(-1)

    def norm(self):
        return float(np.sqrt(np.sum(np.abs(self.amps) ** 2)))

    def normalized(self):
        n = self.norm()
        if n**2 < ZERO_PROBABILITY:
            raise ZeroProbability("cannot normalize a null state")
        return HilbertState(self.amps / n, self.layout)


@dataclass(frozen=True)
class FockOperator:
    matrix: np.ndarray
    label: str = ""
    hermitian: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("operator matrix must be square")
        if self.hermitian and not np.allclose(m, m.conj().T, atol=1e-12):
            raise ValidationError(f"operator {self.label!r} claimed hermitian but is not")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self):
        return self.matrix.shape[0]


# --------------------------------------------------------------------------- builders


def _lowering(cutoff):
    return np.diag(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1)


def build_mode_ops(cutoff):
    """Truncated ``X``, ``P`` and lowering operator on levels ``0..cutoff``."""
    if cutoff < 2:
        raise ValidationError("cutoff must be >= 2")
    a = _lowering(cutoff).astype(complex)
    x = (a + a.conj().T) / sqrt(2.0)
    p = -1j * (a - a.conj().T) / sqrt(2.0)
    return (
        FockOperator(x, "X", hermitian=True),
        FockOperator(p, "P", hermitian=True),
        FockOperator(a, "a"),
    )


def build_spin_ops(n_atoms):
    """Spin-``n_atoms/2`` matrices in the Dicke basis ordered by ascending ``J_z``."""
    if n_atoms < 1:
        raise ValidationError("n_atoms must be >= 1")
    j = n_atoms / 2.0
    m = np.arange(n_atoms + 1) - j
    raise_elems = np.sqrt((j - m[:-1]) * (j + m[:-1] + 1))
    jp = np.diag(raise_elems, -1).astype(complex)
    jx = (jp + jp.conj().T) / 2.0
    jy = (jp - jp.conj().T) / (2.0j)
    jz = np.diag(m).astype(complex)
    return (
        FockOperator(jx, "Jx", hermitian=True),
        FockOperator(jy, "Jy", hermitian=True),
        FockOperator(jz, "Jz", hermitian=True),
    )


def jz_values(n_atoms):
    return np.arange(n_atoms + 1) - n_atoms / 2.0


def css_amplitudes(n_atoms):
    """Coherent spin state along +x: binomial amplitudes ``sqrt(C(N, k)) / 2**(N/2)``."""
    k = np.arange(n_atoms + 1)
    log_binom = np.array([lgamma(n_atoms + 1) - lgamma(i + 1) - lgamma(n_atoms - i + 1) for i in k])
    return np.exp(0.5 * log_binom - 0.5 * n_atoms * log(2.0))


def fock_state(cutoff, n):
    v = np.zeros(cutoff + 1, dtype=complex)
    v[n] = 1.0
    return v


def coherent_amplitudes(cutoff, alpha):
    """Fock amplitudes of ``|alpha>`` truncated at ``cutoff`` (not renormalized)."""
    n = np.arange(cutoff + 1)
    log_fact = np.array([lgamma(i + 1) for i in n])
    alpha = complex(alpha)
    if alpha == 0:
        return fock_state(cutoff, 0)
    mag = np.exp(n * np.log(abs(alpha)) - 0.5 * log_fact - abs(alpha) ** 2 / 2.0)
    return mag * np.exp(1j * n * np.angle(alpha))


def product_state(layout, atom_amps, mode_amps):
    """Tensor product of an atomic vector (ignored when ``n_atoms == 0``) and per-mode vectors."""
    out = np.asarray(atom_amps if layout.n_atoms > 0 else [1.0], dtype=complex)
    for vec in mode_amps:
        out = np.multiply.outer(out, np.asarray(vec, dtype=complex))
    return HilbertState(out, layout)


def photon_state(layout, terms):
    """Photon-only state from ``{(n_0, n_1, ...): amplitude}``."""
    plain = layout.photon_layout()
    amps = np.zeros(plain.shape, dtype=complex)
    for occ, c in terms.items():
        amps[(0,) + tuple(occ)] += c
    return HilbertState(amps, plain)


def mode_operator(layout, op, mode):
    """Embed a single-mode operator into the joint photon space (Kronecker product)."""
    mode = layout.mode(mode)
    out = np.eye(1, dtype=complex)
    for i, c in enumerate(layout.mode_cutoffs):
        factor = np.asarray(op.matrix if i == mode else np.eye(c + 1))
        if factor.shape[0] != c + 1:
            raise ValidationError("operator dimension does not match mode cutoff")
        out = np.kron(out, factor)
    return FockOperator(out, f"{op.label}[{layout.mode_labels[mode]}]", hermitian=op.hermitian)


# --------------------------------------------------------------------------- dynamics


def _apply_along(amps, matrix, axis):
    moved = np.moveaxis(amps, axis, -1)
    return np.moveaxis(moved @ matrix.T, -1, axis)


def apply_mode_operator(state, op, mode):
    axis = 1 + state.layout.mode(mode)
    return HilbertState(_apply_along(state.amps, np.asarray(op.matrix), axis), state.layout)


def fr_unitary_apply(state, kappa0, mode, leakage_tol=LEAKAGE_TOL):
    """Apply ``exp(-i kappa0 P_mode J_z)`` exactly on the truncated space.

    The generator is built with :data:`GUARD_LEVELS` extra Fock levels above
    the declared cutoff; population that ends up there is reported as
    leakage and the state is cut back to the declared cutoff.
    """
    layout = state.layout
    if layout.n_atoms < 1:
        raise ValidationError("fr_unitary_apply needs an atomic factor")
    mode = layout.mode(mode)
    axis = 1 + mode
    cutoff = layout.mode_cutoffs[mode]
    if kappa0 == 0:
        return state
    ext = cutoff + GUARD_LEVELS
    _, p_ext, _ = build_mode_ops(ext)
    evals, evecs = np.linalg.eigh(p_ext.matrix)
    psi = np.moveaxis(state.amps, axis, -1)
    pad = [(0, 0)] * (psi.ndim - 1) + [(0, GUARD_LEVELS)]
    psi = np.pad(psi, pad)
    coeffs = psi @ evecs.conj()
    m = jz_values(layout.n_atoms)
    phase = np.exp(-1j * kappa0 * np.multiply.outer(m, evals))
    phase = phase.reshape((m.size,) + (1,) * (psi.ndim - 2) + (evals.size,))
    psi = (coeffs * phase) @ evecs.T
    total = float(np.sum(np.abs(psi) ** 2))
    leak = float(np.sum(np.abs(psi[..., cutoff + 1 :]) ** 2))
    if total > 0 and leak / total > leakage_tol:
        raise CutoffLeakage(
            f"Faraday rotation leaked {leak / total:.3e} into guard levels of mode "
            f"{layout.mode_labels[mode]!r} (cutoff {cutoff})"
        )
    return HilbertState(np.moveaxis(psi[..., : cutoff + 1], -1, axis), layout)


def _bs_sector_matrix(n, theta):
    """Beam-splitter unitary on the ``n``-photon sector, basis ``|k, n-k>``, k = 0..n."""
    g = np.zeros((n + 1, n + 1))
    for k in range(n + 1):
        if k + 1 <= n:  # a^dag b
            g[k + 1, k] -= sqrt((k + 1) * (n - k))
        if k >= 1:  # b^dag a
            g[k - 1, k] += sqrt(k * (n - k + 1))
    return expm(theta * g)


def beam_splitter_matrix(cutoff_a, cutoff_b, r, t):
    """Two-mode beam-splitter unitary on the truncated product space.

    Convention: ``a^dag -> t a^dag + r b^dag``, so ``|1,0> -> t|1,0> + r|0,1>``.
    Each fixed-total-photon sector is exact; columns whose image falls partly
    beyond a cutoff lose that part (reported as leakage by the caller).
    """
    if abs(r * r + t * t - 1.0) > 1e-12:
        raise ValidationError(f"beam splitter needs r^2 + t^2 = 1, got {r * r + t * t!r}")
    theta = atan2(r, t)
    da, db = cutoff_a + 1, cutoff_b + 1
    u = np.zeros((da * db, da * db))
    for n in range(cutoff_a + cutoff_b + 1):
        ks = [k for k in range(n + 1) if k <= cutoff_a and n - k <= cutoff_b]
        sector = _bs_sector_matrix(n, theta)
        for k_in in ks:
            for k_out in ks:
                u[k_out * db + (n - k_out), k_in * db + (n - k_in)] = sector[k_out, k_in]
    return u


def beam_splitter_apply(state, r, t, modes, leakage_tol=LEAKAGE_TOL):
    layout = state.layout
    ia, ib = (layout.mode(m) for m in modes)
    if ia == ib:
        raise ValidationError("beam splitter needs two distinct modes")
    ca, cb = layout.mode_cutoffs[ia], layout.mode_cutoffs[ib]
    u = beam_splitter_matrix(ca, cb, r, t)
    psi = np.moveaxis(state.amps, (1 + ia, 1 + ib), (-2, -1))
    shape = psi.shape
    flat = psi.reshape(shape[:-2] + (-1,))
    before = float(np.sum(np.abs(flat) ** 2))
    flat = flat @ u.T
    after = float(np.sum(np.abs(flat) ** 2))
    if before > 0 and (before - after) / before > leakage_tol:
        raise CutoffLeakage(f"beam splitter lost {(before - after) / before:.3e} beyond cutoffs")
    psi = np.moveaxis(flat.reshape(shape), (-2, -1), (1 + ia, 1 + ib))
    return HilbertState(psi, layout)


# --------------------------------------------------------------------------- measurement


def post_select(state, bra):
    """Project the photon factor onto ``bra``; return the normalized atomic state and its probability."""
    layout = state.layout
    if bra.layout.n_atoms != 0 or bra.layout.mode_cutoffs != layout.mode_cutoffs:
        raise ValidationError("bra must be a photon-only state on the same modes")
    photon = bra.amps[0].conj()
    atoms = np.tensordot(state.amps, photon, axes=(tuple(range(1, state.amps.ndim)), tuple(range(photon.ndim))))
    prob = float(np.sum(np.abs(atoms) ** 2)) / state.norm() ** 2
    if prob < ZERO_PROBABILITY:
        raise ZeroProbability(f"post-selection probability {prob:.3e}")
    atom_layout = SpaceLayout(layout.n_atoms, ())
    return HilbertState(atoms / np.sqrt(np.sum(np.abs(atoms) ** 2)), atom_layout), prob


def project_modes(state, pattern):
    """Project the listed modes onto Fock states ``{mode: n}``; those modes are removed (unnormalized)."""
    layout = state.layout
    index = [slice(None)] * state.amps.ndim
    keep = []
    for i, label in enumerate(layout.mode_labels):
        key = label if label in pattern else (i if i in pattern else None)
        if key is None:
            keep.append(i)
        else:
            index[1 + i] = int(pattern[key])
    sub = state.amps[tuple(index)]
    new_layout = SpaceLayout(
        layout.n_atoms,
        tuple(layout.mode_cutoffs[i] for i in keep),
        tuple(layout.mode_labels[i] for i in keep),
    )
    return HilbertState(sub, new_layout)


def atomic_branches(state):
    """Reshape to ``(n_atoms + 1, n_branches)``: one unnormalized atomic vector per photon basis state."""
    return state.amps.reshape(state.layout.n_atoms + 1, -1)


def reduced_atomic_density(state):
    """Trace out every photon mode (unnormalized density matrix)."""
    b = atomic_branches(state)
    return b @ b.conj().T


def weak_value_oracle(phi, phi_prime, op, power=1):
    """``<phi'| op**power |phi> / <phi'|phi>`` by dense matrix application."""
    v = phi.vector
    w = phi_prime.vector
    overlap = np.vdot(w, v)
    if abs(overlap) < SINGULAR_OVERLAP:
        raise SingularPostSelection(f"|<phi'|phi>| = {abs(overlap):.3e}")
    m = np.linalg.matrix_power(np.asarray(op.matrix), int(power))
    return complex(np.vdot(w, m @ v) / overlap)


def homodyne_amplitudes(state, mode, x_grid):
    """Atomic amplitudes conditioned on ``X_mode = x`` for each grid point (single-mode light only).

    Returns an array of shape ``(len(x_grid), n_atoms + 1)``; rows are
    unnormalized, their squared norms are probability densities in ``x``.
    """
    layout = state.layout
    mode = layout.mode(mode)
    if len(layout.mode_cutoffs) != 1:
        raise ValidationError("homodyne projection implemented for a single light mode")
    h = hermite_functions(layout.mode_cutoffs[mode], np.asarray(x_grid, dtype=float))
    return np.einsum("nx,kn->xk", h, state.amps)


# --------------------------------------------------------------------------- reports


def spin_moments(n_atoms, atom_state):
    """``(norm, <Jz>, Var Jz)`` of a Dicke-basis vector or density matrix."""
    m = jz_values(n_atoms)
    a = np.asarray(atom_state.amps if isinstance(atom_state, HilbertState) else atom_state)
    if a.ndim == 1:
        weights = np.abs(a) ** 2
    else:
        weights = np.real(np.diag(a))
    norm = float(np.sum(weights))
    if norm < ZERO_PROBABILITY:
        raise ZeroProbability("atomic state has zero weight")
    mean = float(np.dot(weights, m)) / norm
    var = float(np.dot(weights, (m - mean) ** 2)) / norm
    return norm, mean, var


def spin_squeezing_report(n_atoms, atom_state, success_prob=1.0, qnd_xi_sq=None):
    """Squeezing of ``P_A = J_z / sqrt(N/2)`` relative to the coherent spin state (``Var J_z = N/4``)."""
    _, mean, var = spin_moments(n_atoms, atom_state)
    xi_sq = var / (n_atoms / 4.0)
    return SqueezingReport.build(
        xi_sq=xi_sq,
        mean_pa=mean / sqrt(n_atoms / 2.0),
        success_prob=success_prob,
        qnd_xi_sq=qnd_xi_sq,
    )


def kappa0_from_kappa(kappa, n_atoms):
    """Per-atom coupling ``kappa0 = kappa / sqrt(N/2)`` so that ``kappa0 J_z = kappa P_A``."""
    return kappa / sqrt(n_atoms / 2.0)


def homodyne_grid(points=201, half_width=6.0):
    return np.linspace(-half_width, half_width, points)
