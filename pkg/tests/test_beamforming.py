import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holoisac.beamforming import (PhaseCodebook, bd_leakage, block_diag_precoder,
                                  check_si_constraint, dbm_to_watts, design_isac,
                                  digital_si_canceller, effective_si,
                                  op1_objective, op2_objective, residual_si_power,
                                  single_user_precoder, snr_dl, snr_radar,
                                  solve_op1, solve_op2, watts_to_dbm)
from holoisac.dma import MicrostripParams, assemble_analog_bf
from holoisac.errors import InfeasibleError
from holoisac.geometry import ArrayLayout, Scenario, SphericalCoord, radar_channel, si_channel


def cn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def exhaustive(objective, codebook, n_rf, n_e):
    """Best objective over every joint codebook assignment."""
    best = -np.inf
    for combo in itertools.product(codebook.points, repeat=n_rf * n_e):
        best = max(best, objective(np.reshape(combo, (n_rf, n_e))))
    return best


def test_dbm_round_trip():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(0.0) == pytest.approx(1e-3)
    assert watts_to_dbm(dbm_to_watts(-17.3)) == pytest.approx(-17.3)


# -- codebook -----------------------------------------------------------------

def test_codebook_phases():
    cb = PhaseCodebook(3)
    assert cb.size == 8
    assert np.all(np.diff(cb.phases) > 0)
    assert cb.phases[0] == -np.pi / 2 and cb.phases[-1] < np.pi / 2
    np.testing.assert_allclose(np.abs(cb.points), 1.0)
    with pytest.raises(ValueError):
        PhaseCodebook(0)


@given(st.integers(1, 6), st.floats(-20, 20))
def test_nearest_matches_brute_force(bits, phase):
    cb = PhaseCodebook(bits)
    dist = np.abs(cb.points - np.exp(1j * phase))
    k = int(cb.nearest(np.array([phase]))[0])
    assert dist[k] <= dist.min() + 1e-12


# -- OP1 ----------------------------------------------------------------------

def test_op1_two_element_toy():
    cb = PhaseCodebook(3)
    lay = ArrayLayout.from_frequency(n_rf=1, n_e=2)
    a = 0.7 - 0.2j
    h = a * np.array([[1, np.exp(-1j * np.pi / 4)]]).conj()
    w = solve_op1(h, cb, lay)
    assert op1_objective(h, w) == pytest.approx(4 * abs(a) ** 2)
    # a common rotation is free; only the relative phase is fixed
    assert np.angle(w[0, 1] / w[0, 0]) == pytest.approx(-np.pi / 4)


def test_op1_zero_channel_tie_break():
    cb = PhaseCodebook(4)
    lay = ArrayLayout.from_frequency(n_rf=2, n_e=3)
    w = solve_op1(np.zeros((6, 6)), cb, lay)
    np.testing.assert_allclose(np.angle(w), cb.phases[0])


def test_op1_random_instance_matches_enumeration():
    rng = np.random.default_rng(11)
    cb = PhaseCodebook(4)
    lay = ArrayLayout.from_frequency(n_rf=1, n_e=4)
    h = cn(rng, 2, 4)
    got = op1_objective(h, solve_op1(h, cb, lay))
    assert got == pytest.approx(exhaustive(lambda w: op1_objective(h, w), cb, 1, 4), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_op1_ascent_monotone_and_one_opt(seed):
    rng = np.random.default_rng(seed)
    cb = PhaseCodebook(3)
    lay = ArrayLayout.from_frequency(n_rf=2, n_e=3)
    h = cn(rng, 3, 6)
    history = []
    w = solve_op1(h, cb, lay, history=history)
    for trace in history:
        assert np.all(np.diff(trace) >= -1e-12 * max(trace))
    best = op1_objective(h, w)
    for i, n, p in itertools.product(range(2), range(3), cb.points):
        moved = w.copy()
        moved[i, n] = p
        assert op1_objective(h, moved) <= best * (1 + 1e-12)


# -- OP2 ----------------------------------------------------------------------

def test_op2_without_si_maximizes_numerator():
    rng = np.random.default_rng(12)
    cb = PhaseCodebook(3)
    lay = ArrayLayout.from_frequency(n_rf=1, n_e=3)
    h = cn(rng, 3, 3)
    w_tx = np.exp(1j * cb.phases[rng.integers(8, size=(1, 3))])
    w_rx = solve_op2(h, np.zeros((3, 3)), w_tx, cb, lay)
    x = h @ assemble_analog_bf(w_tx).matrix

    def num(w):
        return np.linalg.norm(assemble_analog_bf(w).matrix.conj().T @ x) ** 2
    # receive side of OP1: maximize ||x^H w||
    assert num(w_rx) == pytest.approx(exhaustive(num, cb, 1, 3), rel=1e-12)


def test_op2_toy_matches_exhaustive_ratio():
    rng = np.random.default_rng(13)
    cb = PhaseCodebook(3)
    lay = ArrayLayout.from_frequency(n_rf=1, n_e=2)
    h, h_si = cn(rng, 2, 2), cn(rng, 2, 2)
    w_tx = np.exp(1j * cb.phases[[[1, 6]]])
    w_rx = solve_op2(h, h_si, w_tx, cb, lay)
    ref = exhaustive(lambda w: op2_objective(h, h_si, w_tx, w), cb, 1, 2)
    assert op2_objective(h, h_si, w_tx, w_rx) == pytest.approx(ref, rel=1e-9)


def test_op2_beats_its_start_when_si_is_orthogonal():
    rng = np.random.default_rng(14)
    cb = PhaseCodebook(4)
    lay = ArrayLayout.from_frequency(n_rf=1, n_e=4)
    q, _ = np.linalg.qr(cn(rng, 4, 4))
    h = np.outer(q[:, 0], cn(rng, 4))
    h_si = np.outer(q[:, 1], cn(rng, 4)) * 5
    w_tx = np.ones((1, 4))
    history = []
    w_rx = solve_op2(h, h_si, w_tx, cb, lay, history=history)
    assert op2_objective(h, h_si, w_tx, w_rx) > history[0]
    assert np.all(np.diff(history) >= -1e-12 * max(history))


# -- digital cancellation -----------------------------------------------------

def _chain_inputs(rng, n_rf=3, n_e=2):
    w_tx = assemble_analog_bf(cn(rng, n_rf, n_e))
    w_rx = assemble_analog_bf(cn(rng, n_rf, n_e))
    p = np.exp(1j * rng.uniform(0, 2 * np.pi, n_rf * n_e))
    return w_rx, p, cn(rng, n_rf * n_e, n_rf * n_e), p, w_tx


def test_canceller_negates_effective_si():
    rng = np.random.default_rng(15)
    args = _chain_inputs(rng)
    c = digital_si_canceller(*args)
    np.testing.assert_array_equal(effective_si(*args) + c.d_matrix, 0)
    np.testing.assert_allclose(c.basis.conj().T @ c.basis, np.eye(3), atol=1e-10)


def test_canceller_zero_si():
    rng = np.random.default_rng(16)
    w_rx, p, _, _, w_tx = _chain_inputs(rng)
    c = digital_si_canceller(w_rx, p, np.zeros((6, 6)), p, w_tx)
    assert not np.any(c.d_matrix)
    np.testing.assert_allclose(c.basis.conj().T @ c.basis, np.eye(3), atol=1e-12)


# -- precoders ----------------------------------------------------------------

def test_single_user_aligns_with_dominant_directions():
    h = np.diag([3.0, 2.0, 1.0])
    v = single_user_precoder(h[:2], np.ones(3), np.eye(3), np.eye(3), 2.0)
    assert np.linalg.norm(v) ** 2 == pytest.approx(2.0)
    np.testing.assert_allclose(np.abs(v), np.array([[1, 0], [0, 1], [0, 0]]), atol=1e-12)


def test_single_user_zero_power():
    assert not np.any(single_user_precoder(np.eye(2, 3), np.ones(3), np.eye(3), np.eye(3), 0.0))


def test_single_user_rank_one_channel():
    rng = np.random.default_rng(18)
    h = np.outer(cn(rng, 2), cn(rng, 4))
    basis, _ = np.linalg.qr(cn(rng, 4, 4))
    v = single_user_precoder(h, np.ones(4), np.eye(4), basis, 1.0)
    g = h @ v
    assert np.linalg.norm(g[:, 1]) < 1e-12 * np.linalg.norm(g[:, 0])
    assert np.linalg.norm(v) ** 2 == pytest.approx(1.0)


def test_bd_orthogonal_single_antenna_users():
    h = [np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]])]
    v = block_diag_precoder(h, np.ones(3), np.eye(3), np.eye(3), 1.0, 3)
    assert bd_leakage(h, np.ones(3), np.eye(3), v, 2) == 0.0


def test_bd_leakage_against_projector_oracle():
    rng = np.random.default_rng(19)
    n = 6
    h = [cn(rng, 2, n), cn(rng, 2, n)]
    basis, _ = np.linalg.qr(cn(rng, n, n))
    v = block_diag_precoder(h, np.ones(n), np.eye(n), basis, 1.0, 4)
    v1, v2 = np.split(v, 2, axis=1)
    f = basis[:, n - 4:]
    # independent projector onto the null space of the other user's channel
    for other, mine in ((h[1], v1), (h[0], v2)):
        a = other @ f
        proj = np.eye(4) - np.linalg.pinv(a) @ a
        coeff = f.conj().T @ mine
        np.testing.assert_allclose(proj @ coeff, coeff, atol=1e-12)
    assert np.linalg.norm(h[0] @ v2) / np.linalg.norm(h[0] @ v1) < 1e-8
    assert bd_leakage(h, np.ones(n), np.eye(n), v, 2) < 1e-8
    assert np.linalg.norm(v) ** 2 == pytest.approx(1.0)


def test_bd_identical_users_infeasible():
    rng = np.random.default_rng(20)
    h = cn(rng, 2, 4)
    with pytest.raises(InfeasibleError):
        block_diag_precoder([h, h], np.ones(4), np.eye(4), np.eye(4), 1.0, 4)


def test_bd_alpha_bounds():
    h = [np.eye(2, 4), np.eye(2, 4, 2)]
    with pytest.raises(InfeasibleError):
        block_diag_precoder(h, np.ones(4), np.eye(4), np.eye(4), 1.0, 2)
    with pytest.raises(InfeasibleError):
        block_diag_precoder(h, np.ones(4), np.eye(4), np.eye(4), 1.0, 5)


# -- SI check and SNRs ----------------------------------------------------------

def test_si_check_trivial_cases():
    rng = np.random.default_rng(21)
    args = _chain_inputs(rng)
    assert check_si_constraint(*args, np.zeros((3, 2)), 0.0).feasible
    assert check_si_constraint(*args, cn(rng, 3, 2) * 1e6, np.inf).feasible


def test_si_check_row_norms_by_loop():
    rng = np.random.default_rng(22)
    w_rx, p_rx, h_si, p_tx, w_tx = _chain_inputs(rng)
    v = cn(rng, 3, 2)
    chk = check_si_constraint(w_rx, p_rx, h_si, p_tx, w_tx, v, 50.0)
    a = np.diag(p_rx) @ w_rx.matrix
    b = np.diag(p_tx) @ w_tx.matrix
    for i in range(3):
        total = 0.0
        for col in range(2):
            acc = 0j
            for m in range(6):
                for k in range(6):
                    for j in range(3):
                        acc += np.conj(a[m, i]) * h_si[m, k] * b[k, j] * v[j, col]
            total += abs(acc) ** 2
        assert chk.row_norms[i] == pytest.approx(total, rel=1e-10)
        assert chk.row_ok[i] == (total <= 50.0)


def _toy_design(gamma=1.0, n_users=1, n_rf=4, n_e=8, l_antennas=1, targets=None):
    lay = ArrayLayout.from_frequency(n_rf=n_rf, n_e=n_e)
    params = MicrostripParams.default(lay)
    targets = targets or [SphericalCoord(4.0, np.deg2rad(50), np.pi / 2)]
    bf = design_isac(targets, lay, params, params, si_channel(lay), n_users,
                     l_antennas, 0.1, gamma, PhaseCodebook(6))
    return bf, lay, targets


def test_snr_radar_oracle_and_limits():
    bf, lay, targets = _toy_design()
    h = radar_channel(Scenario(tuple(targets)), lay)
    sig = np.linalg.norm(np.diag(bf.p_rx) @ bf.w_rx.matrix)
    num = np.linalg.norm((np.diag(bf.p_rx) @ bf.w_rx.matrix).conj().T @ h
                         @ np.diag(bf.p_tx) @ bf.w_tx.matrix @ bf.v_digital) ** 2
    ipn = (np.linalg.norm(bf.si_effective @ bf.v_digital) ** 2 + sig ** 2 * 1e-15)
    assert snr_radar(bf, h, 1e-15) == pytest.approx(num / ipn, rel=1e-10)
    assert snr_radar(bf, np.zeros_like(h), 1e-15) == 0.0
    assert snr_radar(bf, h, 1e300) < 1e-250
    assert residual_si_power(bf, cancelled=True) < 1e-20 * residual_si_power(bf)


def test_snr_dl_oracle():
    bf, lay, _ = _toy_design()
    rng = np.random.default_rng(23)
    h = [cn(rng, 1, lay.n_elements), cn(rng, 1, lay.n_elements)]
    chain = np.diag(bf.p_tx) @ bf.w_tx.matrix
    ref = sum(np.linalg.norm(hu @ chain @ bf.v_digital) ** 2 / s for hu, s in zip(h, (2.0, 3.0)))
    assert snr_dl(bf, h, [2.0, 3.0]) == pytest.approx(ref)
    zero = type(bf)(**{**bf.__dict__, "v_digital": np.zeros_like(bf.v_digital)})
    assert snr_dl(zero, h, 1.0) == 0.0


def test_snr_dl_identity_chain():
    bf, _, _ = _toy_design()
    # one element per strip with unit weight and no waveguide phase
    ident = type(bf)(**{**bf.__dict__, "p_tx": np.ones(4),
                        "w_tx": assemble_analog_bf(np.ones((4, 1)))})
    np.testing.assert_array_equal(ident.tx_chain, np.eye(4))
    h = np.arange(4.0)[None] + 1j
    assert snr_dl(ident, [h], 0.5) == pytest.approx(
        np.linalg.norm(h @ bf.v_digital) ** 2 / 0.5)


# -- end to end -------------------------------------------------------------------

def _on_circle(w):
    return np.max(np.abs(np.abs(w - 0.5j) - 0.5))


def test_toy_design_feasible_with_exact_power():
    bf, _, _ = _toy_design(gamma=1.0)
    assert bf.feasible
    assert np.linalg.norm(bf.tx_chain @ bf.v_digital) ** 2 == pytest.approx(0.1, rel=1e-9)
    assert _on_circle(bf.w_tx.weights) < 1e-12 and _on_circle(bf.w_rx.weights) < 1e-12
    res = np.linalg.norm((bf.si_effective + bf.d_cancel.d_matrix) @ bf.v_digital)
    assert res < 1e-10 * np.linalg.norm(bf.si_effective @ bf.v_digital)


def test_zero_threshold_is_infeasible():
    bf, _, _ = _toy_design(gamma=0.0)
    assert not bf.feasible
    assert np.any(bf.si_row_norms > 0)


def test_two_users_alpha_search():
    targets = [SphericalCoord(3.0, np.deg2rad(20), np.pi / 2),
               SphericalCoord(12.0, np.deg2rad(70), np.pi / 2),
               SphericalCoord(7.0, np.deg2rad(45), np.pi / 2)]
    bf, _, _ = _toy_design(gamma=np.inf, n_users=2, l_antennas=2, targets=targets)
    assert bf.feasible and bf.alpha == 4
    assert bf.v_digital.shape == (4, 4)
    bf, _, _ = _toy_design(gamma=0.0, n_users=2, l_antennas=2, targets=targets)
    # every alpha in {4, 3} was tried and failed
    assert not bf.feasible and bf.alpha in (3, 4)


def test_design_rejects_bad_user_count():
    with pytest.raises(ValueError):
        _toy_design(n_users=2)
