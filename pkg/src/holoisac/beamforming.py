"""Joint analog/digital beamformer design for the full-duplex ISAC node.

The design runs in the fixed order: analog TX weights (radar-gain
maximization), analog RX weights (radar-to-SI ratio maximization), DMA
compensation, digital SI cancellation, and finally the digital precoder
(single-user SVD or multi-user block diagonalization) under the per-row
residual-SI threshold and the total power budget.
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .dma import (AnalogBeamformer, MicrostripParams, assemble_analog_bf,
                  compensate_weights, propagation_diagonal)
from .errors import InfeasibleError
from .geometry import ArrayLayout, Scenario, UeDescriptor, dl_channel, radar_channel

# Pre-cancellation SI per RX microstrip sits between -45 and -5 dBm over
# -10..20 dBm of transmit power, so anything near the noise floor would
# reject every design; 1 mW is a front-end protection level.
DEFAULT_GAMMA_DBM = 0.0
_RATIO_EPS = 1e-300


@dataclass(frozen=True)
class PhaseCodebook:
    """``2**bits`` phases ``-pi/2 + k pi / 2**bits`` for ``k = 0, 1, ...``."""

    bits: int

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("codebook needs at least one bit")

    @property
    def size(self) -> int:
        return 2 ** self.bits

    @property
    def phases(self) -> np.ndarray:
        return -np.pi / 2 + np.pi * np.arange(self.size) / self.size

    @property
    def points(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    @property
    def boundaries(self) -> np.ndarray:
        """Phases where the nearest codebook point changes, ascending; the
        last one splits the unused half circle."""
        s = self.size
        inner = -np.pi / 2 + (np.arange(s - 1) + 0.5) * np.pi / s
        return np.append(inner, np.pi - np.pi / (2 * s))

    def nearest(self, phase) -> np.ndarray:
        """Index of the codebook phase closest (on the circle) to ``phase``."""
        s = self.size
        t = np.mod(np.asarray(phase, dtype=float) + np.pi / 2, 2 * np.pi)
        k = np.round(t * s / np.pi).astype(int)
        gap = k >= s
        k[gap] = np.where(t[gap] < 1.5 * np.pi - np.pi / (2 * s), s - 1, 0)
        return k


@dataclass(frozen=True, eq=False)
class CancellationMatrix:
    """Digital SI canceller ``D`` and the right-singular basis ``B`` of ``-D``."""

    d_matrix: np.ndarray
    basis: np.ndarray


class SiCheck(NamedTuple):
    row_norms: np.ndarray
    row_ok: np.ndarray
    feasible: bool


@dataclass(frozen=True, eq=False)
class BeamformerSet:
    """Everything the transceiver needs for one ISAC frame.

    ``p_tx``/``p_rx`` are the propagation diagonals the analog weights were
    compensated for; ``si_row_norms`` are the pre-cancellation SI powers per
    RX microstrip that decided ``feasible``.
    """

    w_tx: AnalogBeamformer
    w_rx: AnalogBeamformer
    v_digital: np.ndarray
    d_cancel: CancellationMatrix
    feasible: bool
    gamma: float
    p_max: float
    p_tx: np.ndarray
    p_rx: np.ndarray
    si_effective: np.ndarray
    si_row_norms: np.ndarray
    alpha: Optional[int] = None
    n_users: int = 1

    @property
    def tx_chain(self) -> np.ndarray:
        """``P_TX W_TX``."""
        return self.p_tx[:, None] * self.w_tx.matrix

    @property
    def rx_chain(self) -> np.ndarray:
        """``P_RX W_RX``."""
        return self.p_rx[:, None] * self.w_rx.matrix

    def user_blocks(self) -> List[np.ndarray]:
        return np.split(self.v_digital, self.n_users, axis=1)


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


# -- analog design ---------------------------------------------------------

def _blocks(n_rf, n_e):
    return [slice(i * n_e, (i + 1) * n_e) for i in range(n_rf)]


def _quad(gram, w):
    return float(np.real(np.vdot(w, gram @ w)))


def _rotation_starts(direction, factor, codebook, n_keep):
    """Best quantized rotations of ``direction`` as coordinate-ascent starts.

    Every global rotation ``psi`` of the matched phases is swept, visiting
    each point where one element's quantized phase changes; the objective
    ``||factor @ w||^2`` is tracked by cumulative rank-one updates. For a
    rank-one ``factor`` the best start is already the discrete optimum.
    """
    size = codebook.size
    cand = codebook.points
    base = np.angle(direction)
    n_el = len(base)
    crossings = np.mod(codebook.boundaries[None, :] - base[:, None], 2 * np.pi)
    order = np.argsort(crossings.ravel(), kind="stable")
    psi = crossings.ravel()[order]
    elem = order // size
    # psi just before the first crossing (wrapping from the last one)
    psi_start = (psi[-1] - 2 * np.pi + psi[0]) / 2
    idx0 = codebook.nearest(base + psi_start)
    # each element crosses all `size` boundaries once per turn, moving one
    # codebook step each time; step_count is the running crossing count
    step_count = np.empty(len(psi), dtype=int)
    step_count[np.argsort(elem, kind="stable")] = np.tile(np.arange(1, size + 1), n_el)
    new = np.mod(idx0[elem] + step_count, size)
    old = np.mod(new - 1, size)
    delta = factor[:, elem] * (cand[new] - cand[old])
    proj = factor @ cand[idx0]
    running = proj[:, None] + np.cumsum(delta, axis=1)
    vals = np.sum(np.abs(running) ** 2, axis=0)
    psi_mid = (psi + np.append(psi[1:], psi[0] + 2 * np.pi)) / 2
    starts, keys = [], set()
    for c in np.argsort(-vals, kind="stable"):
        idx = codebook.nearest(base + psi_mid[c])
        key = idx.tobytes()
        if key not in keys:
            keys.add(key)
            starts.append(idx)
            if len(starts) == n_keep:
                break
    return starts


def _factor(mat, tol=1e-9):
    """``(S Vh)`` rows of the significant singular directions of ``mat`` so
    that ``||mat @ w|| = ||factor @ w||``."""
    _, s, vh = np.linalg.svd(mat, full_matrices=False)
    keep = s > tol * s[0] if s.size and s[0] > 0 else np.zeros(len(s), bool)
    return s[keep, None] * vh[keep], vh[keep]


def _coordinate_ascent(num_grams, den_grams, idx, phases, max_sweeps, history):
    """Cyclic per-element exhaustive search over the codebook.

    Maximizes ``sum_b w_b^H N_b w_b / max(sum_b w_b^H D_b w_b, eps)`` (no
    denominator when ``den_grams`` is None). A move is taken only when it
    strictly improves the objective, so the sequence is monotone and the
    result is 1-opt when the sweep loop ends without a change.
    """
    cand = np.exp(1j * phases)
    w = [np.exp(1j * phases[i]) for i in idx]
    num = sum(_quad(g, wb) for g, wb in zip(num_grams, w))
    den = 1.0 if den_grams is None else sum(_quad(g, wb) for g, wb in zip(den_grams, w))

    def value(n, d):
        return n / max(d, _RATIO_EPS)

    current = value(num, den)
    if history is not None:
        history.append(current)
    for _ in range(max_sweeps):
        changed = False
        for b, g_num in enumerate(num_grams):
            wb = w[b]
            for n in range(len(wb)):
                old = wb[n]
                c_num = g_num[n] @ wb - g_num[n, n] * old
                base_num = num - 2 * np.real(np.conj(old) * c_num)
                trial_num = base_num + 2 * np.real(np.conj(cand) * c_num)
                if den_grams is None:
                    trial = trial_num
                    trial_den = None
                else:
                    g_den = den_grams[b]
                    c_den = g_den[n] @ wb - g_den[n, n] * old
                    base_den = den - 2 * np.real(np.conj(old) * c_den)
                    trial_den = base_den + 2 * np.real(np.conj(cand) * c_den)
                    trial = trial_num / np.maximum(trial_den, _RATIO_EPS)
                k = int(np.argmax(trial))
                if trial[k] > current + 1e-12 * abs(current):
                    wb[n] = cand[k]
                    idx[b][n] = k
                    num = trial_num[k]
                    if trial_den is not None:
                        den = trial_den[k]
                    current = trial[k]
                    changed = True
                    if history is not None:
                        history.append(current)
        # re-anchor the running sums against accumulated rounding
        num = sum(_quad(g, wb) for g, wb in zip(num_grams, w))
        if den_grams is not None:
            den = sum(_quad(g, wb) for g, wb in zip(den_grams, w))
        current = value(num, den)
        if not changed:
            break
    return np.array(idx)


def op1_objective(h_r_hat, w_tilde) -> float:
    """``||H_R W~_TX||^2`` for a weight grid ``(n_rf, n_e)``."""
    w = assemble_analog_bf(w_tilde).matrix
    return float(np.linalg.norm(np.asarray(h_r_hat) @ w) ** 2)


def op2_objective(h_r_hat, h_si, w_tx_tilde, w_rx_tilde, eps=_RATIO_EPS) -> float:
    """``||W~_RX^H H_R W~_TX||^2 / ||W~_RX^H H_SI W~_TX||^2``."""
    wt = assemble_analog_bf(w_tx_tilde).matrix
    wr = assemble_analog_bf(w_rx_tilde).matrix
    num = np.linalg.norm(wr.conj().T @ h_r_hat @ wt) ** 2
    den = np.linalg.norm(wr.conj().T @ h_si @ wt) ** 2
    return float(num / max(den, eps))


def solve_op1(h_r_hat, codebook: PhaseCodebook, layout: ArrayLayout,
              max_sweeps=50, n_directions=3, starts_per_direction=4,
              history=None) -> np.ndarray:
    """Unit-modulus TX weights maximizing the estimated radar gain.

    The objective separates over microstrips. For each block, coordinate
    ascent runs from the best quantized rotations of its leading singular
    directions and the best 1-opt point found is kept. Returns the
    ``(n_rf, n_e)`` weight grid. If ``history`` is a list, the objective
    trace of every ascent run is appended to it.
    """
    h = np.asarray(h_r_hat)
    phases = codebook.phases
    result = []
    for blk in _blocks(layout.n_rf, layout.n_e):
        a = h[:, blk]
        gram = a.conj().T @ a
        factor, dirs = _factor(a)
        if factor.shape[0] == 0:
            result.append(np.exp(1j * phases[np.zeros(layout.n_e, dtype=int)]))
            continue
        best_val, best_idx = -np.inf, None
        for d in dirs[:n_directions]:
            for start in _rotation_starts(d.conj(), factor, codebook,
                                          starts_per_direction):
                trace = [] if history is not None else None
                idx = _coordinate_ascent([gram], None, [start.copy()], phases,
                                         max_sweeps, trace)[0]
                if history is not None:
                    history.append(trace)
                val = _quad(gram, np.exp(1j * phases[idx]))
                if val > best_val:
                    best_val, best_idx = val, idx
        result.append(np.exp(1j * phases[best_idx]))
    return np.array(result)


def solve_op2(h_r_hat, h_si, w_tx_tilde, codebook: PhaseCodebook,
              layout: ArrayLayout, max_sweeps=50, history=None) -> np.ndarray:
    """Unit-modulus RX weights maximizing the radar-to-SI power ratio for a
    fixed TX design."""
    wt = assemble_analog_bf(w_tx_tilde).matrix
    x_r = np.asarray(h_r_hat) @ wt
    x_si = np.asarray(h_si) @ wt
    phases = codebook.phases
    num_grams, den_grams, idx0 = [], [], []
    for blk in _blocks(layout.n_rf, layout.n_e):
        g_num = x_r[blk] @ x_r[blk].conj().T
        num_grams.append(g_num)
        den_grams.append(x_si[blk] @ x_si[blk].conj().T)
        factor, dirs = _factor(x_r[blk].conj().T)
        if factor.shape[0] == 0:
            idx0.append(np.zeros(layout.n_e, dtype=int))
        else:
            idx0.append(_rotation_starts(dirs[0].conj(), factor, codebook, 1)[0])
    idx = _coordinate_ascent(num_grams, den_grams, idx0, phases, max_sweeps,
                             history)
    return np.exp(1j * phases[idx])


# -- digital design --------------------------------------------------------

def _chain(p, w):
    w = np.asarray(getattr(w, "matrix", w))
    p = np.asarray(p)
    return (p if p.ndim == 1 else np.diag(p))[:, None] * w


def effective_si(w_rx, p_rx, h_si, p_tx, w_tx) -> np.ndarray:
    """``W_RX^H P_RX^H H_SI P_TX W_TX`` (``n_rf x n_rf``)."""
    return _chain(p_rx, w_rx).conj().T @ np.asarray(h_si) @ _chain(p_tx, w_tx)


def digital_si_canceller(w_rx, p_rx, h_si, p_tx, w_tx) -> CancellationMatrix:
    """``D = -W~_SI`` together with the right-singular vectors of ``-D``."""
    w_si = effective_si(w_rx, p_rx, h_si, p_tx, w_tx)
    _, _, vh = np.linalg.svd(w_si)
    return CancellationMatrix(d_matrix=-w_si, basis=vh.conj().T)


def _rescale_power(v, tx_chain, p_max):
    power = np.linalg.norm(tx_chain @ v) ** 2
    if power == 0 or p_max == 0:
        return np.zeros_like(v)
    return v * np.sqrt(p_max / power)


def single_user_precoder(h_dl_hat, p_tx, w_tx, basis, p_max) -> np.ndarray:
    """``V = B G`` with ``G`` the top right-singular directions of the
    effective channel ``H_DL P_TX W_TX B``; radiated power equals ``p_max``."""
    chain = _chain(p_tx, w_tx)
    basis = np.asarray(basis)
    h_eff = np.asarray(h_dl_hat) @ chain @ basis
    n_streams = h_eff.shape[0]
    _, _, vh = np.linalg.svd(h_eff)
    e = vh.conj().T[:, :n_streams]
    if e.shape[1] < n_streams:
        e = np.hstack([e, np.zeros((e.shape[0], n_streams - e.shape[1]))])
    return _rescale_power(basis @ (np.sqrt(p_max) * e), chain, p_max)


def _null_space(mat):
    _, s, vh = np.linalg.svd(mat)
    tol = max(mat.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return vh[rank:].conj().T


def block_diag_precoder(h_dl_hats: Sequence[np.ndarray], p_tx, w_tx, basis,
                        p_max, alpha) -> np.ndarray:
    """Block-diagonalization precoder on the ``alpha`` weakest-SI directions.

    Each user's block lives in the null space of all other users' effective
    channels, so inter-user leakage is zero up to rounding.

    Raises
    ------
    InfeasibleError
        If ``alpha`` leaves no interference-free dimension for some user.
    """
    basis = np.asarray(basis)
    n_rf = basis.shape[0]
    n_users = len(h_dl_hats)
    n_streams = h_dl_hats[0].shape[0]
    if not (n_users - 1) * n_streams < alpha <= n_rf:
        raise InfeasibleError(
            f"alpha={alpha} must lie in ({(n_users - 1) * n_streams}, {n_rf}]")
    chain = _chain(p_tx, w_tx)
    f = basis[:, n_rf - alpha:]
    h_eff = [np.asarray(h) @ chain @ f for h in h_dl_hats]
    blocks = []
    for u in range(n_users):
        others = np.vstack([h_eff[k] for k in range(n_users) if k != u])
        e_bar = _null_space(others)
        projected = h_eff[u] @ e_bar
        if e_bar.shape[1] == 0 or (np.linalg.norm(projected)
                                   <= 1e-10 * np.linalg.norm(h_eff[u])):
            raise InfeasibleError(f"user {u} has no interference-free dimension")
        _, _, vh = np.linalg.svd(projected)
        e = vh.conj().T[:, :n_streams]
        if e.shape[1] < n_streams:
            e = np.hstack([e, np.zeros((e.shape[0], n_streams - e.shape[1]))])
        blocks.append(np.sqrt(p_max / n_users) * e_bar @ e)
    return _rescale_power(f @ np.hstack(blocks), chain, p_max)


def bd_leakage(h_dl_hats, p_tx, w_tx, v, n_users) -> float:
    """Worst ``||H_u V_u'|| / ||H_u V_u||`` over ``u != u'``."""
    chain = _chain(p_tx, w_tx)
    v_blocks = np.split(np.asarray(v), n_users, axis=1)
    worst = 0.0
    for u, h in enumerate(h_dl_hats):
        h_eff = np.asarray(h) @ chain
        own = np.linalg.norm(h_eff @ v_blocks[u])
        for k in range(n_users):
            if k != u:
                worst = max(worst, np.linalg.norm(h_eff @ v_blocks[k]) / own)
    return worst


def check_si_constraint(w_rx, p_rx, h_si, p_tx, w_tx, v, gamma) -> SiCheck:
    """Pre-cancellation SI power ``||[W~_SI V]_(i,:)||^2`` against ``gamma``."""
    rows = effective_si(w_rx, p_rx, h_si, p_tx, w_tx) @ np.asarray(v)
    norms = np.sum(np.abs(rows) ** 2, axis=1)
    ok = norms <= gamma
    return SiCheck(norms, ok, bool(np.all(ok)))


def residual_si_power(bf: BeamformerSet, cancelled=False) -> float:
    """``||W~_SI V||^2`` or, with ``cancelled=True``, ``||(W~_SI + D) V||^2``."""
    m = bf.si_effective + (bf.d_cancel.d_matrix if cancelled else 0.0)
    return float(np.linalg.norm(m @ bf.v_digital) ** 2)


def snr_radar(bf: BeamformerSet, h_r_hat, sigma2, cancelled=False) -> float:
    """Radar SNR: echo power over residual SI plus combined noise.

    The residual SI term is taken before cancellation as written in the
    problem statement; ``cancelled=True`` uses the post-cancellation value.
    """
    sig = np.linalg.norm(bf.rx_chain.conj().T @ h_r_hat @ bf.tx_chain
                         @ bf.v_digital) ** 2
    ipn = (residual_si_power(bf, cancelled)
           + np.linalg.norm(bf.rx_chain) ** 2 * sigma2)
    if sig == 0:
        return 0.0
    return float(sig / ipn)


def snr_dl(bf: BeamformerSet, h_dl_hats, sigma_u2) -> float:
    """Sum over users of ``||H_DL,u P_TX W_TX V||^2 / sigma_u^2``."""
    sigma_u2 = np.broadcast_to(np.asarray(sigma_u2, dtype=float), (len(h_dl_hats),))
    return float(sum(np.linalg.norm(np.asarray(h) @ bf.tx_chain @ bf.v_digital) ** 2 / s
                     for h, s in zip(h_dl_hats, sigma_u2)))


# -- end-to-end ------------------------------------------------------------

def _as_coord(item):
    return getattr(item, "coord", item)


def design_isac(estimates, layout: ArrayLayout, params_tx: MicrostripParams,
                params_rx: MicrostripParams, h_si, n_users, l_antennas, p_max,
                gamma, codebook: PhaseCodebook, ula_spacing=None,
                projection="clip") -> BeamformerSet:
    """Full design from target position estimates.

    The first ``n_users`` estimates are taken as the downlink users. For
    several users the number of retained SI directions ``alpha`` is searched
    downward from ``n_rf`` and the first design meeting the per-microstrip
    SI threshold is returned; otherwise the last candidate comes back with
    ``feasible=False``.
    """
    coords = [_as_coord(e) for e in estimates]
    if not 1 <= n_users <= len(coords):
        raise ValueError("need 1 <= n_users <= number of estimates")
    spacing = layout.d_rf if ula_spacing is None else ula_spacing
    h_r_hat = radar_channel(Scenario(tuple(coords)), layout, include_reflection=False)
    h_dl_hats = [dl_channel(UeDescriptor(c, l_antennas, spacing), layout)
                 for c in coords[:n_users]]

    wt_tx = solve_op1(h_r_hat, codebook, layout)
    wt_rx = solve_op2(h_r_hat, h_si, wt_tx, codebook, layout)
    w_tx = assemble_analog_bf(compensate_weights(wt_tx, params_tx, projection))
    w_rx = assemble_analog_bf(compensate_weights(wt_rx, params_rx, projection))
    p_tx = propagation_diagonal(params_tx)
    p_rx = propagation_diagonal(params_rx)
    cancel = digital_si_canceller(w_rx, p_rx, h_si, p_tx, w_tx)
    w_si = -cancel.d_matrix

    def build(v, feasible, norms, alpha):
        return BeamformerSet(w_tx=w_tx, w_rx=w_rx, v_digital=v, d_cancel=cancel,
                             feasible=feasible, gamma=gamma, p_max=p_max,
                             p_tx=p_tx, p_rx=p_rx, si_effective=w_si,
                             si_row_norms=norms, alpha=alpha, n_users=n_users)

    if n_users == 1:
        v = single_user_precoder(h_dl_hats[0], p_tx, w_tx, cancel.basis, p_max)
        chk = check_si_constraint(w_rx, p_rx, h_si, p_tx, w_tx, v, gamma)
        return build(v, chk.feasible, chk.row_norms, layout.n_rf)

    last = None
    for alpha in range(layout.n_rf, (n_users - 1) * l_antennas, -1):
        try:
            v = block_diag_precoder(h_dl_hats, p_tx, w_tx, cancel.basis, p_max, alpha)
        except InfeasibleError:
            continue
        chk = check_si_constraint(w_rx, p_rx, h_si, p_tx, w_tx, v, gamma)
        if chk.feasible:
            return build(v, True, chk.row_norms, alpha)
        last = (v, chk.row_norms, alpha)
    if last is None:
        v = np.zeros((layout.n_rf, n_users * l_antennas), dtype=complex)
        return build(v, False, np.zeros(layout.n_rf), None)
    return build(last[0], False, last[1], last[2])
