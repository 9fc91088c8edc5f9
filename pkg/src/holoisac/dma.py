"""Dynamic metasurface antenna hardware model.

Each microstrip feeds its elements in series, so element ``n`` of
microstrip ``i`` sees the propagation factor ``exp(-rho (alpha + j beta))``.
The metamaterial responses are restricted to the Lorentzian circle
``{(j + exp(j phi)) / 2 : phi in [-pi/2, pi/2]}``.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import ArrayLayout

_PHASE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MicrostripParams:
    """Waveguide constants of one panel.

    ``alpha`` and ``beta`` hold one value per microstrip; ``rho`` is the
    ``(n_rf, n_e)`` grid of element locations along each microstrip.
    """

    alpha: np.ndarray
    beta: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        if alpha.shape != beta.shape or alpha.shape != rho.shape[:1]:
            raise ValueError("alpha/beta need one entry per microstrip row of rho")
        if np.any(alpha < 0) or np.any(beta <= 0):
            raise ValueError("alpha must be >= 0 and beta > 0")
        if np.any(np.diff(rho, axis=1) < 0):
            raise ValueError("rho must be nondecreasing along each microstrip")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "rho", rho)

    @property
    def shape(self):
        return self.rho.shape

    @classmethod
    def default(cls, layout: ArrayLayout, alpha=0.0, beta=None):
        """Lossless strips with free-space wavenumber and ``rho = (n-1) d_e``."""
        if beta is None:
            beta = 2 * np.pi / layout.wavelength
        rho = np.tile(np.arange(layout.n_e) * layout.d_e, (layout.n_rf, 1))
        return cls(alpha=np.full(layout.n_rf, float(alpha)),
                   beta=np.full(layout.n_rf, float(beta)), rho=rho)


@dataclass(frozen=True, eq=False)
class AnalogBeamformer:
    """Per-element weights and the block-sparse ``N x n_rf`` matrix they form."""

    weights: np.ndarray
    matrix: np.ndarray

    @property
    def n_rf(self):
        return self.weights.shape[0]


def propagation_diagonal(params: MicrostripParams) -> np.ndarray:
    """Diagonal of the propagation matrix, flattened microstrip-major."""
    a = params.alpha[:, None] + 1j * params.beta[:, None]
    return np.exp(-params.rho * a).ravel()


def propagation_matrix(params: MicrostripParams) -> np.ndarray:
    """``N x N`` diagonal matrix of in-waveguide attenuation and phase."""
    return np.diag(propagation_diagonal(params))


def lorentzian_map(phi):
    """Map a tuning phase in ``[-pi/2, pi/2]`` to ``(j + exp(j phi)) / 2``."""
    phi = np.asarray(phi, dtype=float)
    if np.any(np.abs(phi) > np.pi / 2 + _PHASE_TOL):
        raise ValueError("Lorentzian phase must lie in [-pi/2, pi/2]")
    w = (1j + np.exp(1j * phi)) / 2
    return w if w.ndim else complex(w)


def fold_phase(phase):
    """Wrap phases modulo ``pi`` into ``[-pi/2, pi/2]``."""
    phase = np.asarray(phase, dtype=float)
    return phase - np.pi * np.round(phase / np.pi)


def clip_phase(phase):
    """Nearest point of the arc ``[-pi/2, pi/2]`` to each phase on the circle."""
    wrapped = np.angle(np.exp(1j * np.asarray(phase, dtype=float)))
    return np.clip(wrapped, -np.pi / 2, np.pi / 2)


def assemble_analog_bf(weights) -> AnalogBeamformer:
    """Place row ``i`` of an ``(n_rf, n_e)`` weight grid into column ``i``."""
    weights = np.atleast_2d(np.asarray(weights, dtype=complex))
    if weights.ndim != 2:
        raise ValueError("weights must be an (n_rf, n_e) grid")
    n_rf, n_e = weights.shape
    matrix = np.zeros((n_rf * n_e, n_rf), dtype=complex)
    for i in range(n_rf):
        matrix[i * n_e:(i + 1) * n_e, i] = weights[i]
    return AnalogBeamformer(weights=weights, matrix=matrix)


def compensate_weights(unconstrained, params: MicrostripParams,
                       projection="clip") -> np.ndarray:
    """Turn unit-modulus design weights into feasible Lorentzian weights.

    The design phase is advanced by ``rho * beta`` to pre-cancel the
    in-waveguide phase and brought into ``[-pi/2, pi/2]`` before the
    Lorentzian map.

    Parameters
    ----------
    unconstrained : ndarray, shape (n_rf, n_e)
    params : MicrostripParams
    projection : {"clip", "fold"}
        ``"clip"`` moves an out-of-range phase to the nearest arc endpoint.
        ``"fold"`` wraps it modulo ``pi``, which flips the sign of the
        element's beam contribution; it is kept for comparison only since
        the flips are element-wise and wash out the array gain.
    """
    w = np.asarray(unconstrained, dtype=complex)
    if w.shape != params.shape:
        raise ValueError(f"weight grid {w.shape} does not match {params.shape}")
    if not np.allclose(np.abs(w), 1.0, atol=1e-9):
        raise ValueError("unconstrained weights must have unit modulus")
    composite = np.angle(w) + params.rho * params.beta[:, None]
    if projection == "clip":
        phi = clip_phase(composite)
    elif projection == "fold":
        phi = fold_phase(composite)
    else:
        raise ValueError(f"unknown projection {projection!r}")
    return lorentzian_map(phi)


def random_weights(rng, codebook_phases, shape) -> np.ndarray:
    """Unit-modulus weights drawn uniformly from a phase codebook."""
    idx = rng.integers(len(codebook_phases), size=shape)
    return np.exp(1j * np.asarray(codebook_phases)[idx])
