"""Received-signal synthesis, link metrics and the Monte Carlo sweep.

One trial draws ``K`` targets (the first ``U`` of them are the downlink
users), estimates them through random DMA weights, designs the ISAC
beamformers from those estimates and estimates again through the optimized
receiver. Every trial owns an RNG derived from ``(seed, trial)`` so that
the sweep is reproducible regardless of ordering, and the same scenarios
are reused in every ``(p_max, n_rf)`` cell.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .beamforming import (DEFAULT_GAMMA_DBM, BeamformerSet, PhaseCodebook,
                          dbm_to_watts, design_isac, digital_si_canceller,
                          snr_dl, snr_radar, _rescale_power)
from .dma import (MicrostripParams, assemble_analog_bf, compensate_weights,
                  propagation_diagonal, random_weights)
from .errors import InfeasibleError
from .estimation import (SearchGrid, SnapshotBlock, TargetEstimate,
                         estimate_targets, match_estimates)
from .geometry import (ArrayLayout, Scenario, SphericalCoord, UeDescriptor,
                       dl_channel, radar_channel, si_channel)

log = logging.getLogger(__name__)


def thermal_noise_dbm(bandwidth_hz):
    """Noise power ``-174 + 10 log10(B)`` in dBm."""
    return -174.0 + 10.0 * np.log10(bandwidth_hz)


@dataclass(frozen=True)
class ScenarioDistribution:
    """Targets are i.i.d. uniform in range and elevation at a fixed azimuth."""

    r_bounds: Tuple[float, float] = (1.0, 25.0)
    theta_bounds_deg: Tuple[float, float] = (0.0, 90.0)
    phi_deg: float = 90.0

    def __post_init__(self):
        lo, hi = self.r_bounds
        if not 0 < lo <= hi:
            raise ValueError("range bounds must satisfy 0 < low <= high")
        lo, hi = self.theta_bounds_deg
        if not 0 <= lo <= hi <= 180:
            raise ValueError("elevation bounds must lie in [0, 180] degrees")

    def draw(self, rng, n_targets) -> Scenario:
        r = rng.uniform(*self.r_bounds, size=n_targets)
        theta = np.deg2rad(rng.uniform(*self.theta_bounds_deg, size=n_targets))
        beta = np.exp(1j * rng.uniform(0, 2 * np.pi, size=n_targets))
        phi = np.deg2rad(self.phi_deg)
        targets = tuple(SphericalCoord(float(r[k]), float(theta[k]), phi)
                        for k in range(n_targets))
        return Scenario(targets=targets, reflection_coeffs=tuple(beta))


@dataclass(frozen=True)
class FixedTargets:
    """A fixed target geometry; only the reflection phases are random."""

    targets: Tuple[SphericalCoord, ...]

    def draw(self, rng, n_targets) -> Scenario:
        if n_targets != len(self.targets):
            raise ValueError(f"{len(self.targets)} fixed targets, {n_targets} requested")
        beta = np.exp(1j * rng.uniform(0, 2 * np.pi, size=n_targets))
        return Scenario(targets=tuple(self.targets), reflection_coeffs=tuple(beta))


@dataclass(frozen=True)
class SimConfig:
    """Everything a sweep needs; powers are in dBm and converted on use.

    ``layout.n_rf`` is only a template, each cell swaps in its value from
    ``n_rf_grid``. ``noise_dbm=None`` derives the noise from the bandwidth.
    """

    layout: ArrayLayout
    distribution: object = field(default_factory=ScenarioDistribution)
    p_max_grid: Tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    n_rf_grid: Tuple[int, ...] = (4, 5, 6)
    t_slots: int = 200
    trials: int = 10
    bandwidth_hz: float = 150e3
    noise_dbm: Optional[float] = None
    seed: int = 0
    n_targets: int = 3
    n_users: int = 2
    l_antennas: int = 2
    ula_spacing: Optional[float] = None
    gamma_dbm: float = DEFAULT_GAMMA_DBM
    codebook_bits: int = 10
    waveguide_alpha: float = 0.0
    waveguide_beta: Optional[float] = None
    grid: SearchGrid = field(default_factory=SearchGrid.default)

    def __post_init__(self):
        object.__setattr__(self, "p_max_grid", tuple(float(p) for p in self.p_max_grid))
        object.__setattr__(self, "n_rf_grid", tuple(int(n) for n in self.n_rf_grid))
        if self.noise_dbm is None:
            object.__setattr__(self, "noise_dbm", float(thermal_noise_dbm(self.bandwidth_hz)))
        checks = [
            ("trials", self.trials >= 1),
            ("t_slots", self.t_slots >= 1),
            ("bandwidth_hz", self.bandwidth_hz > 0),
            ("p_max_grid", len(self.p_max_grid) >= 1),
            ("n_rf_grid", len(self.n_rf_grid) >= 1),
            ("n_targets", self.n_targets >= 1),
            ("n_users", 1 <= self.n_users <= self.n_targets),
            ("l_antennas", self.l_antennas >= 1),
            ("codebook_bits", self.codebook_bits >= 1),
        ]
        for key, ok in checks:
            if not ok:
                raise ValueError(f"invalid value for {key}")
        for n_rf in self.n_rf_grid:
            if self.n_targets >= n_rf:
                raise ValueError(f"n_targets={self.n_targets} leaves no noise "
                                 f"subspace with n_rf={n_rf}")
            if self.n_users * self.l_antennas > n_rf:
                raise ValueError(f"n_rf={n_rf} cannot carry "
                                 f"{self.n_users * self.l_antennas} streams")

    @property
    def sigma2(self) -> float:
        return float(dbm_to_watts(self.noise_dbm))

    @property
    def spacing(self) -> float:
        return self.layout.d_rf if self.ula_spacing is None else self.ula_spacing

    def layout_for(self, n_rf) -> ArrayLayout:
        return replace(self.layout, n_rf=int(n_rf))

    def params_for(self, layout: ArrayLayout) -> MicrostripParams:
        return MicrostripParams.default(layout, self.waveguide_alpha, self.waveguide_beta)


@dataclass(frozen=True, eq=False)
class TrialResult:
    """Outcome of one Monte Carlo trial in one sweep cell.

    ``errors`` holds matched ``(range m, elevation rad, azimuth rad)`` rows
    per target; it is ``None`` if estimation did not run.
    ``design_estimates`` are the phase-1 estimates the beamformers were
    built from, users first.
    """

    trial: int
    p_max_dbm: float
    n_rf: int
    estimates: List[TargetEstimate]
    beamformers: Optional[BeamformerSet]
    errors: Optional[np.ndarray]
    sum_rate: float
    snr_radar: float
    snr_dl: float
    feasible: bool
    design_estimates: List[TargetEstimate] = field(default_factory=list)


@dataclass(frozen=True)
class MetricsRecord:
    p_max_dbm: float
    n_rf: int
    rmse_range_m: float
    rmse_elev_deg: float
    rmse_azim_deg: float
    mean_sum_rate: float
    trials_used: int
    infeasible_count: int


# -- signal synthesis ------------------------------------------------------

def _cn(rng, shape, var=1.0):
    """Circularly-symmetric complex Gaussian samples of variance ``var``."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synth_rx_snapshots(h_r, bf: BeamformerSet, t_slots, sigma2, rng,
                       h_si=None) -> SnapshotBlock:
    """``T`` receive snapshots behind the RX DMA.

    Each column is ``W_RX^H P_RX^H H_R P_TX W_TX V s + (W~_SI + D) V s +
    W_RX^H P_RX^H n`` with unit-covariance symbols and element noise of
    variance ``sigma2``. ``h_si`` rebuilds the SI term from the raw SI
    channel; by default the stored ``W~_SI`` is used.
    """
    rx = bf.rx_chain
    v = bf.v_digital
    s = _cn(rng, (v.shape[1], t_slots))
    noise = _cn(rng, (rx.shape[0], t_slots), sigma2)
    x = bf.tx_chain @ (v @ s)
    y = rx.conj().T @ (np.asarray(h_r) @ x + noise)
    w_si = bf.si_effective if h_si is None else rx.conj().T @ np.asarray(h_si) @ bf.tx_chain
    y = y + (w_si + bf.d_cancel.d_matrix) @ (v @ s)
    return SnapshotBlock(y)


def synth_ue_signal(h_dl, bf: BeamformerSet, sigma_u2, rng) -> np.ndarray:
    """One slot at a UE: ``H_DL P_TX W_TX V s + n``, length ``L``."""
    h_dl = np.atleast_2d(np.asarray(h_dl))
    v = bf.v_digital
    s = _cn(rng, v.shape[1])
    n = _cn(rng, h_dl.shape[0], sigma_u2)
    return h_dl @ (bf.tx_chain @ (v @ s)) + n


def achievable_rate(bf: BeamformerSet, true_dl_channels: Sequence[np.ndarray],
                    sigma_u2_list) -> float:
    """Sum over users of ``log2 det(I + Q_u^-1 H_u V_u V_u^H H_u^H)``.

    ``H_u = H_DL,u P_TX W_TX`` and ``Q_u`` is noise plus the other users'
    streams as seen by user ``u``.
    """
    sig2 = np.broadcast_to(np.asarray(sigma_u2_list, dtype=float),
                           (len(true_dl_channels),))
    blocks = np.split(bf.v_digital, len(true_dl_channels), axis=1)
    total = 0.0
    for u, h in enumerate(true_dl_channels):
        h_u = np.atleast_2d(np.asarray(h)) @ bf.tx_chain
        L = h_u.shape[0]
        q = sig2[u] * np.eye(L, dtype=complex)
        for k, vk in enumerate(blocks):
            if k != u:
                g = h_u @ vk
                q = q + g @ g.conj().T
        g = h_u @ blocks[u]
        m = np.eye(L) + np.linalg.solve(q, g @ g.conj().T)
        _, logdet = np.linalg.slogdet(m)
        total += max(logdet / np.log(2), 0.0)
    return float(total)


def rmse(errors) -> np.ndarray:
    """Per-column ``sqrt(mean(e**2))`` over the rows of ``errors``."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("rmse needs at least one error")
    e = e.reshape(-1, e.shape[-1]) if e.ndim > 1 else e[:, None]
    return np.sqrt(np.mean(e ** 2, axis=0))


# -- one trial -------------------------------------------------------------

def trial_streams(seed, trial):
    """Independent generators for scenario, phase-1 weights and both noises."""
    children = np.random.SeedSequence([int(seed), int(trial)]).spawn(4)
    return [np.random.default_rng(c) for c in children]


def initial_beamformers(layout, params, h_si, codebook, n_streams, p_max,
                        rng) -> BeamformerSet:
    """Random codebook analog weights with one stream per microstrip."""
    shape = (layout.n_rf, layout.n_e)
    w_tx = assemble_analog_bf(compensate_weights(
        random_weights(rng, codebook.phases, shape), params))
    w_rx = assemble_analog_bf(compensate_weights(
        random_weights(rng, codebook.phases, shape), params))
    p = propagation_diagonal(params)
    cancel = digital_si_canceller(w_rx, p, h_si, p, w_tx)
    tx_chain = p[:, None] * w_tx.matrix
    v = _rescale_power(np.eye(layout.n_rf, n_streams, dtype=complex), tx_chain, p_max)
    return BeamformerSet(w_tx=w_tx, w_rx=w_rx, v_digital=v, d_cancel=cancel,
                         feasible=True, gamma=np.inf, p_max=p_max, p_tx=p,
                         p_rx=p, si_effective=-cancel.d_matrix,
                         si_row_norms=np.zeros(layout.n_rf))


def _estimate(cfg, h_r, bf, layout, rng):
    block = synth_rx_snapshots(h_r, bf, cfg.t_slots, cfg.sigma2, rng)
    est, _ = estimate_targets(block, cfg.n_targets, cfg.grid, bf.w_rx, bf.p_rx, layout)
    return est


def run_trial(cfg: SimConfig, n_rf, p_max_dbm, trial) -> TrialResult:
    """Two-phase protocol for one scenario draw."""
    layout = cfg.layout_for(n_rf)
    params = cfg.params_for(layout)
    h_si = _si_channel(layout)
    codebook = PhaseCodebook(cfg.codebook_bits)
    p_max = float(dbm_to_watts(p_max_dbm))
    rng_scn, rng_w, rng_n1, rng_n2 = trial_streams(cfg.seed, trial)

    scn = cfg.distribution.draw(rng_scn, cfg.n_targets)
    h_r = radar_channel(scn, layout)
    ues = [UeDescriptor(c, cfg.l_antennas, cfg.spacing) for c in scn.targets[:cfg.n_users]]
    h_dl = [dl_channel(ue, layout) for ue in ues]
    n_streams = cfg.n_users * cfg.l_antennas

    # phase 1: random analog weights
    bf0 = initial_beamformers(layout, params, h_si, codebook, n_streams, p_max, rng_w)
    est1 = _estimate(cfg, h_r, bf0, layout, rng_n1)

    # the UE identities of the estimates are taken as known
    order, _ = match_estimates(est1, scn.targets)
    rest = [k for k in range(len(est1)) if k not in set(order[:cfg.n_users])]
    ordered = [est1[k] for k in order[:cfg.n_users]] + [est1[k] for k in rest]

    # phase 2: designed beamformers
    bf = design_isac(ordered, layout, params, params, h_si, cfg.n_users,
                     cfg.l_antennas, p_max, float(dbm_to_watts(cfg.gamma_dbm)),
                     codebook, ula_spacing=cfg.spacing)
    sigma2 = cfg.sigma2
    if bf.feasible:
        est = _estimate(cfg, h_r, bf, layout, rng_n2)
        rate = achievable_rate(bf, h_dl, sigma2)
        g_r = snr_radar(bf, h_r, sigma2)
        g_dl = snr_dl(bf, h_dl, sigma2)
    else:
        # an infeasible design is never switched on
        est, rate, g_r, g_dl = est1, float("nan"), float("nan"), float("nan")
    _, errors = match_estimates(est, scn.targets)
    return TrialResult(trial=trial, p_max_dbm=float(p_max_dbm), n_rf=int(n_rf),
                       estimates=est, beamformers=bf, errors=errors,
                       sum_rate=rate, snr_radar=g_r, snr_dl=g_dl,
                       feasible=bf.feasible, design_estimates=ordered)


_SI_CACHE = {}


def _si_channel(layout):
    if layout not in _SI_CACHE:
        _SI_CACHE.clear()
        _SI_CACHE[layout] = si_channel(layout)
    return _SI_CACHE[layout]


# -- the sweep -------------------------------------------------------------

def aggregate(p_max_dbm, n_rf, results: Sequence[TrialResult]) -> MetricsRecord:
    """Fold the trials of one cell into RMSEs and the mean feasible rate."""
    used = [r for r in results if r.errors is not None]
    if used:
        e = rmse(np.vstack([r.errors for r in used]))
        errs = (float(e[0]), float(np.rad2deg(e[1])), float(np.rad2deg(e[2])))
    else:
        errs = (float("nan"),) * 3
    rates = [r.sum_rate for r in used if r.feasible]
    mean_rate = float(np.mean(rates)) if rates else float("nan")
    return MetricsRecord(float(p_max_dbm), int(n_rf), *errs, mean_rate,
                         len(used), sum(not r.feasible for r in used))


def _cell_worker(args):
    cfg, n_rf, p_dbm, trial = args
    try:
        return run_trial(cfg, n_rf, p_dbm, trial)
    except (InfeasibleError, np.linalg.LinAlgError) as exc:
        log.warning("trial %d (p_max=%g dBm, n_rf=%d) failed: %s",
                    trial, p_dbm, n_rf, exc)
        return None


def run_experiment(cfg: SimConfig, workers: Optional[int] = None,
                   trial_sink: Optional[Callable[[TrialResult], None]] = None
                   ) -> List[MetricsRecord]:
    """Sweep ``n_rf_grid x p_max_grid`` and return one record per cell.

    Cells come back ``n_rf``-major in the order of the config grids. With
    ``workers > 1`` trials run in a process pool; results are collected in
    trial order, so the output does not depend on ``workers``.
    """
    jobs = [(cfg, n_rf, p, t) for n_rf in cfg.n_rf_grid for p in cfg.p_max_grid
            for t in range(cfg.trials)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cell_worker, jobs, chunksize=4))
    else:
        outcomes = [_cell_worker(j) for j in jobs]

    records = []
    for c, (n_rf, p) in enumerate((n, p) for n in cfg.n_rf_grid for p in cfg.p_max_grid):
        cell = [o for o in outcomes[c * cfg.trials:(c + 1) * cfg.trials] if o is not None]
        if trial_sink is not None:
            for r in cell:
                trial_sink(r)
        records.append(aggregate(p, n_rf, cell))
        log.info("cell p_max=%g dBm n_rf=%d: %s", p, n_rf, records[-1])
    return records
