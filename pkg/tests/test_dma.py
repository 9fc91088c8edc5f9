import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from holoisac.dma import (MicrostripParams, assemble_analog_bf, clip_phase,
                          compensate_weights, fold_phase, lorentzian_map,
                          propagation_diagonal, propagation_matrix,
                          random_weights)
from holoisac.geometry import ArrayLayout

LAYOUT = ArrayLayout.from_frequency(n_rf=2, n_e=5)
phase_grids = arrays(float, (2, 5), elements=st.floats(-20, 20))


def on_circle(w):
    return np.max(np.abs(np.abs(np.asarray(w) - 0.5j) - 0.5))


# -- propagation ------------------------------------------------------------

def test_first_element_is_unity():
    p = propagation_diagonal(MicrostripParams.default(LAYOUT, alpha=0.3, beta=77.0))
    assert p[0] == 1 and p[5] == 1


def test_half_wavelength_gives_minus_one():
    lam = LAYOUT.wavelength
    params = MicrostripParams(alpha=[0.0], beta=[2 * np.pi / lam], rho=[[0.0, lam / 2]])
    assert propagation_matrix(params)[1, 1] == pytest.approx(-1.0)


def test_lossy_strip_decays():
    p = propagation_diagonal(MicrostripParams.default(LAYOUT, alpha=2.0))
    mags = np.abs(p.reshape(2, 5))
    assert np.all(np.diff(mags, axis=1) < 0)


def test_params_validation():
    with pytest.raises(ValueError):
        MicrostripParams(alpha=[-1.0], beta=[1.0], rho=[[0.0, 1.0]])
    with pytest.raises(ValueError):
        MicrostripParams(alpha=[0.0], beta=[1.0], rho=[[1.0, 0.0]])
    with pytest.raises(ValueError):
        MicrostripParams(alpha=[0.0, 0.0], beta=[1.0], rho=[[0.0, 1.0]])


# -- Lorentzian map ---------------------------------------------------------

@pytest.mark.parametrize("phi,w", [(0.0, 0.5 + 0.5j), (np.pi / 2, 1j), (-np.pi / 2, 0.0)])
def test_lorentzian_examples(phi, w):
    assert lorentzian_map(phi) == pytest.approx(w, abs=1e-15)


def test_lorentzian_rejects_out_of_range():
    with pytest.raises(ValueError):
        lorentzian_map(2.0)


@given(st.floats(-np.pi / 2, np.pi / 2))
def test_lorentzian_on_circle(phi):
    assert on_circle(lorentzian_map(phi)) < 1e-15


# -- assembly ---------------------------------------------------------------

def test_single_strip_is_dense_column():
    w = np.arange(1, 5) * 1j
    m = assemble_analog_bf(w[None]).matrix
    assert m.shape == (4, 1)
    np.testing.assert_array_equal(m[:, 0], w)


def test_two_by_two_block_layout():
    w = np.array([[1, 2], [3, 4]], dtype=complex)
    m = assemble_analog_bf(w).matrix
    np.testing.assert_array_equal(m, [[1, 0], [2, 0], [0, 3], [0, 4]])
    assert assemble_analog_bf(w).n_rf == 2


def test_zero_weights_zero_matrix():
    assert not np.any(assemble_analog_bf(np.zeros((3, 4))).matrix)


# -- compensation -----------------------------------------------------------

def _params(rho_beta):
    rho_beta = np.atleast_2d(rho_beta)
    n_rf, n_e = rho_beta.shape
    beta = np.ones(n_rf)
    # rho must be nondecreasing; use rho = rho_beta with beta = 1
    return MicrostripParams(alpha=np.zeros(n_rf), beta=beta, rho=rho_beta)


def test_unit_weight_no_phase():
    out = compensate_weights(np.ones((1, 1)), _params([[0.0]]))
    assert out[0, 0] == pytest.approx((1 + 1j) / 2)


def test_waveguide_phase_cancelled():
    rb = np.array([[0.0, 0.4, 1.3, 2.9]])
    out = compensate_weights(np.exp(-1j * rb), _params(rb))
    np.testing.assert_allclose(out, (1 + 1j) / 2, atol=1e-15)


def test_phase_addition():
    out = compensate_weights(np.array([[np.exp(1j * np.pi / 4)]]), _params([[np.pi / 8]]))
    assert out[0, 0] == pytest.approx(lorentzian_map(3 * np.pi / 8))


def test_rejects_non_unit_modulus():
    with pytest.raises(ValueError):
        compensate_weights(0.5 * np.ones((1, 1)), _params([[0.0]]))
    with pytest.raises(ValueError):
        compensate_weights(np.ones((1, 2)), _params([[0.0]]))
    with pytest.raises(ValueError):
        compensate_weights(np.ones((1, 1)), _params([[0.0]]), projection="wrap")


def test_clip_and_fold_differ_out_of_range():
    w = np.array([[np.exp(3j * np.pi / 4)]])
    clip = compensate_weights(w, _params([[0.0]]), projection="clip")
    fold = compensate_weights(w, _params([[0.0]]), projection="fold")
    assert clip[0, 0] == pytest.approx(lorentzian_map(np.pi / 2))
    assert fold[0, 0] == pytest.approx(lorentzian_map(-np.pi / 4))


@given(phase_grids, st.sampled_from(["clip", "fold"]))
def test_compensated_weights_on_circle(phases, projection):
    params = MicrostripParams.default(LAYOUT)
    out = compensate_weights(np.exp(1j * phases), params, projection)
    assert on_circle(out) <= 1e-12


@given(st.floats(-50, 50))
def test_fold_stays_on_the_same_line(phase):
    f = fold_phase(phase)
    assert -np.pi / 2 - 1e-12 <= f <= np.pi / 2 + 1e-12
    assert abs(np.sin(f - phase)) < 1e-9


@given(st.floats(-50, 50))
def test_clip_is_nearest_arc_point(phase):
    c = clip_phase(phase)
    arc = np.linspace(-np.pi / 2, np.pi / 2, 2001)
    best = np.min(np.abs(np.exp(1j * arc) - np.exp(1j * phase)))
    assert abs(np.exp(1j * c) - np.exp(1j * phase)) <= best + 1e-9


def test_random_weights_from_codebook():
    rng = np.random.default_rng(0)
    phases = np.array([-1.0, 0.0, 1.0])
    w = random_weights(rng, phases, (3, 7))
    assert w.shape == (3, 7)
    assert np.all(np.min(np.abs(np.angle(w)[..., None] - phases), axis=-1) < 1e-12)
