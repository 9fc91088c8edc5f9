"""Subspace (MUSIC) estimation of target range, elevation and azimuth.

The receive snapshots live in the ``n_rf``-dimensional space behind the RX
DMA, so the array manifold searched over is the beamspace response
``M(r, theta, phi) = W_RX^H P_RX^H a_RX(r, theta, phi)``.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .errors import InfeasibleError
from .geometry import RX, ArrayLayout, SphericalCoord, spherical_to_cartesian, steering_matrix

DEFAULT_CEILING = 1e12

# complex entries; above this the grid manifold is rebuilt chunk by chunk
_CACHE_LIMIT = 3e7
_CHUNK = 2e6

# normalizers of the assignment cost: range span, elevation span, full turn
_COST_SCALE = np.array([25.0, np.pi / 2, 2 * np.pi])


@dataclass(frozen=True, eq=False)
class SnapshotBlock:
    """``n_rf x T`` matrix of receive snapshots, one column per slot."""

    y_matrix: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y_matrix, dtype=complex)
        if y.ndim != 2 or y.shape[1] < 1:
            raise ValueError("snapshot block must be a 2-D array with >= 1 column")
        object.__setattr__(self, "y_matrix", y)

    @property
    def t_slots(self) -> int:
        return self.y_matrix.shape[1]


@dataclass(frozen=True, eq=False)
class SubspaceDecomposition:
    eigenvalues: np.ndarray
    signal_basis: np.ndarray
    noise_basis: np.ndarray


@dataclass(frozen=True)
class SearchGrid:
    """Rectangular ``(r, theta, phi)`` grid plus the number of zoom levels."""

    r_axis: Tuple[float, ...]
    theta_axis: Tuple[float, ...]
    phi_axis: Tuple[float, ...]
    refine_levels: int = 2

    def __post_init__(self):
        for name in ("r_axis", "theta_axis", "phi_axis"):
            axis = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if len(axis) < 1:
                raise ValueError(f"{name} needs at least one point")
            if np.any(np.diff(axis) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, axis)
        if self.refine_levels < 0:
            raise ValueError("refine_levels must be >= 0")

    @classmethod
    def default(cls, r_bounds=(1.0, 25.0), r_step=0.1,
                theta_bounds_deg=(0.0, 90.0), theta_step_deg=0.5,
                phi_deg=90.0, phi_step_deg=2.0, refine_levels=2):
        """Uniform grid; pass ``phi_deg=None`` to search azimuth over a full turn."""
        r = _inclusive_range(*r_bounds, r_step)
        theta = np.deg2rad(_inclusive_range(*theta_bounds_deg, theta_step_deg))
        if phi_deg is None:
            phi = np.deg2rad(np.arange(0.0, 360.0, phi_step_deg))
        else:
            phi = np.array([np.deg2rad(phi_deg)])
        return cls(tuple(r), tuple(theta), tuple(phi), refine_levels)

    @property
    def shape(self):
        return len(self.r_axis), len(self.theta_axis), len(self.phi_axis)

    def points(self) -> np.ndarray:
        """Cartesian grid points in C order over ``(r, theta, phi)``."""
        return _mesh_points(self.r_axis, self.theta_axis, self.phi_axis)


@dataclass(frozen=True)
class TargetEstimate:
    coord: SphericalCoord
    spectrum_value: float


def _inclusive_range(start, stop, step):
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def _mesh_points(r, theta, phi):
    rr, tt, pp = np.meshgrid(r, theta, phi, indexing="ij")
    return spherical_to_cartesian(rr.ravel(), tt.ravel(), pp.ravel())


def sample_covariance(block) -> np.ndarray:
    """``R = Y Y^H / T``."""
    y = block.y_matrix if isinstance(block, SnapshotBlock) else np.asarray(block)
    if y.ndim != 2 or y.shape[1] == 0:
        raise ValueError("empty snapshot block")
    return y @ y.conj().T / y.shape[1]


def subspace_split(cov, n_targets) -> SubspaceDecomposition:
    """Eigen-split ``cov`` into ``n_targets`` signal and the remaining noise
    directions, eigenvalues in descending order."""
    cov = np.asarray(cov)
    dim = cov.shape[0]
    if n_targets >= dim:
        raise InfeasibleError(
            f"{n_targets} targets leave no noise subspace in dimension {dim}")
    if n_targets < 0:
        raise ValueError("target count must be nonnegative")
    herm = (cov + cov.conj().T) / 2
    vals, vecs = np.linalg.eigh(herm)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    return SubspaceDecomposition(eigenvalues=vals,
                                 signal_basis=vecs[:, :n_targets],
                                 noise_basis=vecs[:, n_targets:])


def _combiner(w_rx, p_rx) -> np.ndarray:
    """``P_RX W_RX``; the manifold is ``combiner^H a``."""
    w = np.asarray(getattr(w_rx, "matrix", w_rx))
    p = np.asarray(p_rx)
    p_diag = p if p.ndim == 1 else np.diag(p)
    return p_diag[:, None] * w


def _null_fraction(m, noise_basis, normalize):
    """Noise-subspace energy of each row of ``m`` (rows are manifold points)."""
    proj = m.conj() @ noise_basis
    num = np.einsum("ij,ij->i", proj, proj.conj()).real
    if not normalize:
        return num
    den = np.einsum("ij,ij->i", m, m.conj()).real
    out = np.ones_like(num)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def _spectrum_from_denominator(d, ceiling):
    return 1.0 / np.maximum(d, 1.0 / ceiling)


def _chunked_steering(points, layout, combiner=None):
    """Steering rows for many points, optionally projected by ``combiner``."""
    step = max(1, int(_CHUNK // layout.n_elements))
    width = layout.n_elements if combiner is None else combiner.shape[1]
    out = np.empty((len(points), width), dtype=complex)
    for start in range(0, len(points), step):
        a = steering_matrix(RX, points[start:start + step], layout)
        out[start:start + step] = a if combiner is None else a @ combiner.conj()
    return out


@lru_cache(maxsize=2)
def _cached_manifold(layout, r_axis, theta_axis, phi_axis):
    return _chunked_steering(_mesh_points(r_axis, theta_axis, phi_axis), layout)


def _beamspace_manifold(layout, axes, combiner) -> np.ndarray:
    """Rows ``combiner^H a_RX(p)`` for every point of the ``axes`` mesh."""
    n_points = len(axes[0]) * len(axes[1]) * len(axes[2])
    if n_points * layout.n_elements <= _CACHE_LIMIT:
        return _cached_manifold(layout, *axes) @ combiner.conj()
    return _chunked_steering(_mesh_points(*axes), layout, combiner)


def music_denominator(points, decomp, w_rx, p_rx, layout, normalize=True):
    """``M^H U_n U_n^H M`` (divided by ``M^H M`` when normalized) at
    Cartesian ``points``."""
    m = steering_matrix(RX, points, layout) @ _combiner(w_rx, p_rx).conj()
    return _null_fraction(m, decomp.noise_basis, normalize)


def music_spectrum(coord: SphericalCoord, decomp: SubspaceDecomposition, w_rx,
                   p_rx, layout: ArrayLayout, ceiling=DEFAULT_CEILING,
                   normalize=True) -> float:
    """MUSIC pseudo-spectrum at one point, clipped to ``ceiling``.

    With ``normalize=True`` (default) the beamspace response is scaled to
    unit norm first, which removes the ``1/r`` path-loss bias toward distant
    candidates; ``normalize=False`` gives the bare ``1/(M^H U_n U_n^H M)``.
    """
    d = music_denominator(np.atleast_2d(coord.cartesian()), decomp, w_rx,
                          p_rx, layout, normalize)
    return float(_spectrum_from_denominator(d, ceiling)[0])


def _local_peaks(score, n_peaks):
    """Indices of the strongest local maxima, non-adjacent, best first."""
    filtered = ndimage.maximum_filter(score, size=3, mode="nearest")
    cand = np.argwhere(score >= filtered)
    # lexsort: last key is primary -> score descending, then C order
    flat = np.ravel_multi_index(cand.T, score.shape)
    order = np.lexsort((flat, -score[tuple(cand.T)]))
    picked = []
    for idx in cand[order]:
        if all(np.max(np.abs(idx - p)) > 1 for p in picked):
            picked.append(idx)
            if len(picked) == n_peaks:
                break
    return picked


def _refine(center, axes, decomp, combiner, layout, levels, normalize):
    """Zoom ``levels`` times around ``center`` with a 10x finer local grid."""
    center = np.array(center, dtype=float)
    steps = [np.min(np.diff(a)) if len(a) > 1 else 0.0 for a in axes]
    best_d = None
    for level in range(1, levels + 1):
        local = []
        for c, a, s in zip(center, axes, steps):
            if s == 0.0:
                local.append(np.array([c]))
                continue
            h = s / 10 ** level
            vals = np.clip(c + h * np.arange(-10, 11), a[0], a[-1])
            local.append(np.unique(vals))
        pts = _mesh_points(*local)
        m = steering_matrix(RX, pts, layout) @ combiner.conj()
        d = _null_fraction(m, decomp.noise_basis, normalize)
        k = int(np.argmin(d))
        ir, it, ip = np.unravel_index(k, [len(v) for v in local])
        center = np.array([local[0][ir], local[1][it], local[2][ip]])
        best_d = d[k]
    return center, best_d


def estimate_targets(block, n_targets, grid: SearchGrid, w_rx, p_rx,
                     layout: ArrayLayout, ceiling=DEFAULT_CEILING,
                     normalize=True) -> Tuple[List[TargetEstimate], bool]:
    """Grid-search the MUSIC spectrum for ``n_targets`` peaks.

    Returns
    -------
    estimates : list of TargetEstimate
        Best peak first.
    degenerate : bool
        True when fewer than ``n_targets`` separated local maxima exist; the
        list is then padded with copies of the global maximum.
    """
    decomp = subspace_split(sample_covariance(block), n_targets)
    combiner = _combiner(w_rx, p_rx)
    axes = (grid.r_axis, grid.theta_axis, grid.phi_axis)
    m = _beamspace_manifold(layout, axes, combiner)
    d = _null_fraction(m, decomp.noise_basis, normalize)
    score = -d.reshape(grid.shape)
    peaks = _local_peaks(score, n_targets)
    degenerate = len(peaks) < n_targets
    while len(peaks) < n_targets:
        peaks.append(peaks[0])

    estimates = []
    for idx in peaks:
        center = [axes[a][idx[a]] for a in range(3)]
        d_best = -score[tuple(idx)]
        if grid.refine_levels:
            center, d_best = _refine(center, axes, decomp, combiner, layout,
                                     grid.refine_levels, normalize)
        coord = SphericalCoord(float(center[0]), float(center[1]),
                               float(np.mod(center[2], 2 * np.pi)))
        value = float(_spectrum_from_denominator(np.array([d_best]), ceiling)[0])
        estimates.append(TargetEstimate(coord, value))
    return estimates, degenerate


def _as_coord(item) -> SphericalCoord:
    return getattr(item, "coord", item)


def parameter_errors(estimate, truth) -> np.ndarray:
    """Absolute ``(range, elevation, azimuth)`` errors; azimuth wraps."""
    e, t = _as_coord(estimate), _as_coord(truth)
    dphi = abs(e.phi - t.phi) % (2 * np.pi)
    return np.array([abs(e.r - t.r), abs(e.theta - t.theta),
                     min(dphi, 2 * np.pi - dphi)])


def match_estimates(estimates: Sequence, truth: Sequence):
    """Minimum-cost one-to-one pairing of estimates to true targets.

    Returns
    -------
    assignment : ndarray of int
        ``assignment[k]`` is the index of the estimate paired with target k.
    errors : ndarray, shape (K, 3)
        Absolute range (m), elevation and azimuth (rad) errors per target.
    """
    if len(estimates) != len(truth):
        raise ValueError(f"{len(estimates)} estimates for {len(truth)} targets")
    errs = np.array([[parameter_errors(e, t) for e in estimates] for t in truth])
    if errs.size == 0:
        return np.zeros(0, dtype=int), np.zeros((0, 3))
    cost = (errs / _COST_SCALE).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    assignment = cols[np.argsort(rows)]
    return assignment, errs[np.arange(len(truth)), assignment]
