from math import sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from wmsqueeze import fockoracle as fo
from wmsqueeze import protocols as pr
from wmsqueeze.errors import CutoffLeakage, SingularPostSelection, ValidationError, ZeroProbability


def comm(a, b):
    return a @ b - b @ a


def test_mode_operator_elements():
    x, p, a = fo.build_mode_ops(3)
    p2 = p.matrix @ p.matrix
    assert p2[0, 0].real == pytest.approx(0.5, abs=1e-14)
    assert p2[1, 1].real == pytest.approx(1.5, abs=1e-14)
    assert p2[0, 2].real == pytest.approx(-sqrt(2) / 2, abs=1e-14)
    assert abs(p2[0, 2].imag) < 1e-15


@pytest.mark.parametrize("cutoff", [2, 5, 12, 30])
def test_mode_operators_hermitian_and_canonical(cutoff):
    x, p, a = fo.build_mode_ops(cutoff)
    assert np.max(np.abs(x.matrix - x.matrix.conj().T)) < 1e-14
    assert np.max(np.abs(p.matrix - p.matrix.conj().T)) < 1e-14
    c = comm(x.matrix, p.matrix)
    interior = cutoff - 1
    assert np.max(np.abs(c[:interior, :interior] - 1j * np.eye(interior))) < 1e-13


def test_spin_ops_small():
    jx, jy, jz = fo.build_spin_ops(1)
    assert np.allclose(jx.matrix, np.array([[0, 0.5], [0.5, 0]]))
    assert np.allclose(np.sort(np.linalg.eigvalsh(jz.matrix)), [-0.5, 0.5])
    _, _, jz2 = fo.build_spin_ops(2)
    assert np.allclose(np.sort(np.linalg.eigvalsh(jz2.matrix)), [-1, 0, 1])


@pytest.mark.parametrize("n_atoms", [1, 2, 7, 40])
def test_spin_commutators(n_atoms):
    jx, jy, jz = (o.matrix for o in fo.build_spin_ops(n_atoms))
    assert np.max(np.abs(comm(jx, jy) - 1j * jz)) < 1e-12
    assert np.max(np.abs(comm(jy, jz) - 1j * jx)) < 1e-12
    assert np.max(np.abs(comm(jz, jx) - 1j * jy)) < 1e-12


@pytest.mark.parametrize("n_atoms", [4, 50, 200])
def test_css_projection_noise(n_atoms):
    c = fo.css_amplitudes(n_atoms)
    jx = fo.build_spin_ops(n_atoms)[0].matrix
    assert np.real(c @ jx @ c) == pytest.approx(n_atoms / 2, rel=1e-12)
    _, mean, var = fo.spin_moments(n_atoms, c)
    assert abs(mean) < 1e-12
    assert var == pytest.approx(n_atoms / 4, rel=1e-12)
    assert fo.spin_squeezing_report(n_atoms, c).xi_sq == pytest.approx(1.0, rel=1e-12)


def test_layout_bounds():
    with pytest.raises(ValidationError):
        fo.SpaceLayout(4, (1, 3))
    with pytest.raises(ValidationError):
        fo.SpaceLayout(2000, (200, 200))


def test_fr_identity_and_unitarity():
    n = 20
    layout = fo.SpaceLayout(n, (24,), ("b",))
    rng = np.random.default_rng(1)
    photon = np.zeros(25, dtype=complex)
    photon[:4] = rng.normal(size=4) + 1j * rng.normal(size=4)
    state = fo.product_state(layout, fo.css_amplitudes(n), [photon / np.linalg.norm(photon)])
    same = fo.fr_unitary_apply(state, 0.0, "b")
    assert np.max(np.abs(same.amps - state.amps)) < 1e-14
    out = fo.fr_unitary_apply(state, fo.kappa0_from_kappa(0.4, n), "b")
    assert out.norm() == pytest.approx(1.0, abs=1e-12)


def test_fr_matches_dense_exponential():
    n, cutoff = 4, 30
    layout = fo.SpaceLayout(n, (cutoff,), ("b",))
    state = fo.product_state(layout, fo.css_amplitudes(n), [fo.fock_state(cutoff, 1)])
    kappa0 = 0.3
    out = fo.fr_unitary_apply(state, kappa0, "b")
    # independent route: exponentiate P on a much larger space, then truncate
    big = 80
    _, p, _ = fo.build_mode_ops(big)
    ref = np.zeros((n + 1, cutoff + 1), dtype=complex)
    for k, m in enumerate(fo.jz_values(n)):
        u = expm(-1j * kappa0 * m * p.matrix)
        ref[k] = fo.css_amplitudes(n)[k] * u[: cutoff + 1, 1]
    assert np.max(np.abs(out.amps - ref)) < 1e-10


def test_fr_leakage_signal():
    n = 50
    layout = fo.SpaceLayout(n, (4,), ("b",))
    state = fo.product_state(layout, fo.css_amplitudes(n), [fo.fock_state(4, 1)])
    with pytest.raises(CutoffLeakage):
        fo.fr_unitary_apply(state, fo.kappa0_from_kappa(2.0, n), "b")


def test_beam_splitter_single_photon():
    layout = fo.SpaceLayout(0, (3, 3), ("a", "b"))
    state = fo.photon_state(layout, {(1, 0): 1.0})
    r, t = 0.6, 0.8
    out = fo.beam_splitter_apply(state, r, t, ("a", "b"))
    assert out.amps[0, 0, 1] == pytest.approx(r, abs=1e-14)
    assert out.amps[0, 1, 0] == pytest.approx(t, abs=1e-14)
    swap = fo.beam_splitter_apply(state, 1.0, 0.0, ("a", "b"))
    assert abs(swap.amps[0, 0, 1]) == pytest.approx(1.0, abs=1e-14)


def test_beam_splitter_rejects_bad_amplitudes():
    layout = fo.SpaceLayout(0, (3, 3), ("a", "b"))
    with pytest.raises(ValidationError):
        fo.beam_splitter_apply(fo.photon_state(layout, {(1, 0): 1.0}), 0.6, 0.6, ("a", "b"))


@settings(max_examples=25, deadline=None)
@given(theta=st.floats(-3.1, 3.1), seed=st.integers(0, 2**16))
def test_beam_splitter_conserves_norm_and_number(theta, seed):
    cutoff = 6
    layout = fo.SpaceLayout(0, (cutoff, cutoff), ("a", "b"))
    rng = np.random.default_rng(seed)
    amps = np.zeros((1, cutoff + 1, cutoff + 1), dtype=complex)
    # at most 3 photons in total so nothing is pushed past the cutoff
    for na in range(4):
        for nb in range(4 - na):
            amps[0, na, nb] = rng.normal() + 1j * rng.normal()
    amps /= np.linalg.norm(amps)
    state = fo.HilbertState(amps, layout)
    out = fo.beam_splitter_apply(state, np.sin(theta), np.cos(theta), ("a", "b"))
    n = np.add.outer(np.arange(cutoff + 1), np.arange(cutoff + 1))
    assert out.norm() == pytest.approx(1.0, abs=1e-12)
    assert np.sum(n * np.abs(out.amps[0]) ** 2) == pytest.approx(np.sum(n * np.abs(amps[0]) ** 2), abs=1e-12)


def test_beam_splitter_matrix_unitary():
    u = fo.beam_splitter_matrix(5, 5, 0.3, sqrt(1 - 0.09))
    # sectors with at most 5 photons fit entirely inside both cutoffs
    total = np.add.outer(np.arange(6), np.arange(6)).ravel()
    keep = total <= 5
    block = u[np.ix_(keep, keep)]
    assert np.max(np.abs(block.conj().T @ block - np.eye(keep.sum()))) < 1e-12
    assert np.max(np.abs(u[np.ix_(~keep, keep)])) == 0


def test_weak_value_single_photon_expectation():
    layout = fo.SpaceLayout(0, (3,), ("b",))
    one = fo.photon_state(layout, {(1,): 1.0})
    _, p, _ = fo.build_mode_ops(3)
    assert fo.weak_value_oracle(one, one, p, 2) == pytest.approx(1.5, abs=1e-14)


def test_weak_value_closed_form_example():
    sp = pr.BeamSplitterPair(0.6, 0.8, 0.9, sqrt(1 - 0.81))
    layout = fo.SpaceLayout(0, (3, 3), ("a", "b"))
    _, p, _ = fo.build_mode_ops(3)
    dense = fo.weak_value_oracle(sp.prepared(layout), sp.post_selected(layout), fo.mode_operator(layout, p, "b"), 2)
    assert dense.real == pytest.approx(sp.weak_value().real, abs=1e-10)
    assert dense.real == pytest.approx(3.3230, abs=1e-3)


def test_weak_value_singular():
    layout = fo.SpaceLayout(0, (3, 3), ("a", "b"))
    sp = pr.BeamSplitterPair(0.6, 0.8, 0.8, 0.6)  # r r' = t t'
    _, p, _ = fo.build_mode_ops(3)
    with pytest.raises(SingularPostSelection):
        fo.weak_value_oracle(sp.prepared(layout), sp.post_selected(layout), fo.mode_operator(layout, p, "b"), 2)


def test_post_select_orthogonal_is_zero_probability():
    n = 4
    layout = fo.SpaceLayout(n, (2, 2), ("a", "b"))
    state = fo.product_state(layout, fo.css_amplitudes(n), [fo.fock_state(2, 1), fo.fock_state(2, 0)])
    with pytest.raises(ZeroProbability):
        fo.post_select(state, fo.photon_state(layout, {(0, 1): 1.0}))
    sp = pr.BeamSplitterPair(0.6, 0.8, 0.8, 0.6)
    prepared = fo.beam_splitter_apply(state, sp.r, sp.t, ("a", "b"))
    with pytest.raises(ZeroProbability):
        fo.post_select(prepared, sp.post_selected(layout))


def test_post_select_zero_coupling_probability():
    sp = pr.BeamSplitterPair(0.6, 0.8, 0.9, sqrt(1 - 0.81))
    run = pr.wm_oracle(0.0, sp, settings=pr.OracleSettings(n_atoms=10))
    assert run.report.success_prob == pytest.approx(sp.overlap**2, rel=1e-12)


def test_homodyne_qnd_small_ensemble():
    n, kappa = 40, 0.5
    res = pr.qnd_oracle(kappa, pr.OracleSettings(n_atoms=n))
    assert res["branch"].xi_sq == pytest.approx(1 / (1 + kappa**2), rel=0.02)
    assert abs(res["branch"].mean_pa) < 1e-12
    # a nonzero outcome shifts the conditional mean
    assert abs(res["mean_pa_at_x1"]) > 0.1


def test_homodyne_single_mode_only():
    layout = fo.SpaceLayout(2, (3, 3), ("a", "b"))
    state = fo.product_state(layout, fo.css_amplitudes(2), [fo.fock_state(3, 0), fo.fock_state(3, 0)])
    with pytest.raises(ValidationError):
        fo.homodyne_amplitudes(state, "a", fo.homodyne_grid())


@pytest.mark.parametrize("kappa", [0.3, 0.8])
def test_single_spin_flip_cancellation(kappa):
    sp = pr.solve_beam_splitters(pr.optimal_weak_value(kappa))
    run = pr.wm_oracle(kappa, sp, settings=pr.OracleSettings(n_atoms=100))
    assert abs(run.report.mean_pa) < 1e-10


def test_reduced_density_trace():
    n = 6
    layout = fo.SpaceLayout(n, (12,), ("b",))
    state = fo.product_state(layout, fo.css_amplitudes(n), [fo.fock_state(12, 1)])
    out = fo.fr_unitary_apply(state, 0.2, "b")
    rho = fo.reduced_atomic_density(out)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(rho - rho.conj().T)) < 1e-14
