"""Near-field geometry of the co-located TX/RX DMA panels.

Both panels lie in the xz-plane. Microstrips run along z (elements at
``z = (n-1) d_e``) and are stacked along x; the TX panel occupies ``x > 0``
and the RX panel its mirror image ``x < 0``. Spherical coordinates measure
``theta`` from the +z axis and ``phi`` from the +x axis in the xy-plane.

All indices in the public API that refer to microstrips/elements are
1-based, matching the usual ``(i, n)`` notation. Vectors over the whole
panel are ordered ``(i - 1) * n_e + (n - 1)`` (0-based storage).
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

# rounded so that 120 GHz maps to exactly 2.5 mm
SPEED_OF_LIGHT = 3e8

TX = "tx"
RX = "rx"
_SIDES = (TX, RX)


@dataclass(frozen=True)
class SphericalCoord:
    """A point ``(r, theta, phi)`` relative to the panel origin."""

    r: float
    theta: float
    phi: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"range must be positive, got {self.r}")
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError(f"elevation must lie in [0, pi], got {self.theta}")
        if not 0.0 <= self.phi < 2 * np.pi:
            raise ValueError(f"azimuth must lie in [0, 2pi), got {self.phi}")

    def cartesian(self) -> np.ndarray:
        return spherical_to_cartesian(self.r, self.theta, self.phi)

    @classmethod
    def from_cartesian(cls, point) -> "SphericalCoord":
        x, y, z = point
        r = float(np.sqrt(x * x + y * y + z * z))
        theta = float(np.arccos(np.clip(z / r, -1.0, 1.0)))
        phi = float(np.mod(np.arctan2(y, x), 2 * np.pi))
        if phi >= 2 * np.pi:
            phi = 0.0
        return cls(r, theta, phi)


@dataclass(frozen=True)
class ArrayLayout:
    """Geometry and propagation constants shared by the TX and RX panels.

    Parameters
    ----------
    n_rf : int
        Microstrips per panel (one RF chain each).
    n_e : int
        Metamaterial elements per microstrip.
    d_e, d_rf : float
        Element spacing along a microstrip and microstrip spacing (m).
    d_p : float
        Panel offset; the first TX/RX microstrips sit at ``x = +/- d_p / 2``.
    wavelength : float
        Carrier wavelength (m).
    kappa_abs : float
        Molecular absorption coefficient (1/m).
    b_gain : float
        Exponent of the element radiation profile.
    """

    n_rf: int
    n_e: int
    d_e: float
    d_rf: float
    d_p: float
    wavelength: float
    kappa_abs: float = 0.0033
    b_gain: float = 2.0

    def __post_init__(self):
        if self.n_rf < 1 or self.n_e < 1:
            raise ValueError("n_rf and n_e must be at least 1")
        if self.d_e <= 0 or self.d_rf <= 0 or self.wavelength <= 0:
            raise ValueError("spacings and wavelength must be positive")
        if self.d_p < 0:
            raise ValueError("d_p must be nonnegative")
        if self.kappa_abs < 0 or self.b_gain < 0:
            raise ValueError("kappa_abs and b_gain must be nonnegative")

    @property
    def n_elements(self) -> int:
        return self.n_rf * self.n_e

    @classmethod
    def from_frequency(cls, n_rf=4, n_e=512, frequency_hz=120e9, d_p=0.02,
                       d_e=None, d_rf=None, kappa_abs=0.0033, b_gain=2.0):
        """Layout with ``d_e = lambda/5`` and ``d_rf = lambda/2`` by default."""
        lam = SPEED_OF_LIGHT / frequency_hz
        return cls(n_rf=n_rf, n_e=n_e,
                   d_e=lam / 5 if d_e is None else d_e,
                   d_rf=lam / 2 if d_rf is None else d_rf,
                   d_p=d_p, wavelength=lam,
                   kappa_abs=kappa_abs, b_gain=b_gain)


@dataclass(frozen=True)
class UeDescriptor:
    """A downlink user: reference point plus an ``L``-antenna linear array."""

    coord: SphericalCoord
    l_antennas: int = 2
    ula_spacing: float = 1.25e-3

    def __post_init__(self):
        if self.l_antennas < 1:
            raise ValueError("l_antennas must be at least 1")
        if self.ula_spacing <= 0:
            raise ValueError("ula_spacing must be positive")


@dataclass(frozen=True)
class Scenario:
    """``K`` point targets; the first ``U`` of them are the downlink users."""

    targets: Tuple[SphericalCoord, ...]
    ues: Tuple[UeDescriptor, ...] = ()
    reflection_coeffs: Tuple[complex, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "ues", tuple(self.ues))
        betas = tuple(self.reflection_coeffs) or (1.0 + 0j,) * len(self.targets)
        object.__setattr__(self, "reflection_coeffs", betas)
        if len(self.ues) > len(self.targets):
            raise ValueError("more users than targets")
        if len(betas) != len(self.targets):
            raise ValueError("one reflection coefficient per target required")
        if not np.allclose(np.abs(betas), 1.0, atol=1e-12):
            raise ValueError("reflection coefficients must have unit modulus")

    @property
    def n_targets(self) -> int:
        return len(self.targets)


def spherical_to_cartesian(r, theta, phi) -> np.ndarray:
    """Broadcasting conversion; the last axis of the result holds ``x, y, z``."""
    r, theta, phi = np.broadcast_arrays(np.asarray(r, float),
                                        np.asarray(theta, float),
                                        np.asarray(phi, float))
    st = np.sin(theta)
    return np.stack([r * st * np.cos(phi), r * st * np.sin(phi),
                     r * np.cos(theta)], axis=-1)


def _check_side(side):
    if side not in _SIDES:
        raise ValueError(f"side must be one of {_SIDES}, got {side!r}")


def element_position(side, i, n, layout: ArrayLayout) -> np.ndarray:
    """Cartesian position of element ``n`` of microstrip ``i`` (1-based)."""
    _check_side(side)
    if not (1 <= i <= layout.n_rf and 1 <= n <= layout.n_e):
        raise ValueError(f"index (i={i}, n={n}) outside a "
                         f"{layout.n_rf}x{layout.n_e} panel")
    sign = 1.0 if side == TX else -1.0
    x = sign * (layout.d_p / 2 + (i - 1) * layout.d_rf)
    return np.array([x, 0.0, (n - 1) * layout.d_e])


def element_positions(side, layout: ArrayLayout) -> np.ndarray:
    """All ``N`` element positions of one panel, shape ``(N, 3)``."""
    _check_side(side)
    sign = 1.0 if side == TX else -1.0
    i = np.repeat(np.arange(layout.n_rf), layout.n_e)
    n = np.tile(np.arange(layout.n_e), layout.n_rf)
    pos = np.zeros((layout.n_elements, 3))
    pos[:, 0] = sign * (layout.d_p / 2 + i * layout.d_rf)
    pos[:, 2] = n * layout.d_e
    return pos


def radiation_profile(theta, b):
    """Element power pattern ``2(b+1) cos^b(theta)`` on ``[-pi/2, pi/2]``."""
    theta = np.asarray(theta, dtype=float)
    inside = np.abs(theta) <= np.pi / 2
    # cos can dip a hair below zero at +/-pi/2
    c = np.clip(np.cos(theta), 0.0, None)
    out = np.where(inside, 2.0 * (b + 1.0) * c ** b, 0.0)
    return out if out.ndim else float(out)


def attenuation(r, theta, layout: ArrayLayout):
    """Amplitude factor ``sqrt(F(theta)) * lambda/(4 pi r) * exp(-kappa r / 2)``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("distance must be positive")
    out = (np.sqrt(radiation_profile(theta, layout.b_gain))
           * layout.wavelength / (4 * np.pi * r)
           * np.exp(-layout.kappa_abs * r / 2))
    return out if np.ndim(out) else float(out)


def _link_response(points, elements, layout):
    """Complex gain between each point and each element, shape ``(P, E)``.

    Elevation seen from an element is ``asin(|dz| / distance)``.
    """
    diff = points[:, None, :] - elements[None, :, :]
    dist = np.sqrt(np.einsum("...k,...k->...", diff, diff))
    if np.any(dist <= 0):
        raise ValueError("point coincides with an array element")
    elev = np.arcsin(np.clip(np.abs(diff[..., 2]) / dist, -1.0, 1.0))
    amp = attenuation(dist, elev, layout)
    return amp * np.exp(2j * np.pi / layout.wavelength * dist)


def steering_vector(side, coord: SphericalCoord, layout: ArrayLayout) -> np.ndarray:
    """Near-field response ``a_side(r, theta, phi)`` of length ``N``."""
    _check_side(side)
    p = np.atleast_2d(coord.cartesian())
    return _link_response(p, element_positions(side, layout), layout)[0]


def steering_matrix(side, points, layout: ArrayLayout) -> np.ndarray:
    """Responses for many Cartesian points at once, shape ``(P, N)``."""
    _check_side(side)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return _link_response(points, element_positions(side, layout), layout)


def ue_antenna_positions(ue: UeDescriptor) -> np.ndarray:
    """Cartesian positions of a user's ``L`` antennas, shape ``(L, 3)``.

    Antenna ``l`` keeps the reference height ``r cos(theta)`` and azimuth,
    while its horizontal radius grows by ``(l - 1) * ula_spacing``. This is
    the ``atan``/``r cos(theta) / cos(theta_l)`` construction written in
    Cartesian form, so ``theta = pi/2`` needs no special case.
    """
    c = ue.coord
    rho = c.r * np.sin(c.theta) + np.arange(ue.l_antennas) * ue.ula_spacing
    z = np.full(ue.l_antennas, c.r * np.cos(c.theta))
    return np.stack([rho * np.cos(c.phi), rho * np.sin(c.phi), z], axis=-1)


def dl_channel(ue: UeDescriptor, layout: ArrayLayout) -> np.ndarray:
    """``L x N`` downlink channel from the TX panel to one user."""
    return _link_response(ue_antenna_positions(ue),
                          element_positions(TX, layout), layout)


def radar_channel(scenario: Scenario, layout: ArrayLayout,
                  include_reflection=True) -> np.ndarray:
    """Round-trip channel ``sum_k beta_k a_RX(k) a_TX(k)^T``, ``N x N``.

    The transmit response is not conjugated, so the target sees the same
    ``a_TX^T x`` that a user at that location would. With ``include_reflection=False`` every ``beta_k`` is replaced by one,
    which is how the channel is rebuilt from position estimates alone.
    """
    if scenario.n_targets < 1:
        raise ValueError("at least one target required")
    pts = np.array([t.cartesian() for t in scenario.targets])
    a_tx = steering_matrix(TX, pts, layout)
    a_rx = steering_matrix(RX, pts, layout)
    betas = (np.asarray(scenario.reflection_coeffs) if include_reflection
             else np.ones(scenario.n_targets))
    return (a_rx.T * betas) @ a_tx


def si_distances(layout: ArrayLayout) -> np.ndarray:
    """TX-to-RX element distances ``r_{i,i',n,n'}`` indexed ``[rx, tx]``.

    Taken literally, the horizontal gap between RX microstrip ``i`` and TX
    microstrip ``i'`` is ``d_p + (i + i' - 2) d_rf``.
    """
    i = np.repeat(np.arange(layout.n_rf), layout.n_e)
    n = np.tile(np.arange(layout.n_e), layout.n_rf)
    dx = layout.d_p + (i[:, None] + i[None, :]) * layout.d_rf
    dz = (n[None, :] - n[:, None]) * layout.d_e
    return np.sqrt(dx ** 2 + dz ** 2)


def si_channel(layout: ArrayLayout) -> np.ndarray:
    """Near-field self-interference channel (rows: RX, columns: TX)."""
    if layout.d_p <= 0:
        raise ValueError("d_p must be positive for the SI channel")
    dist = si_distances(layout)
    n = np.tile(np.arange(layout.n_e), layout.n_rf)
    dz = np.abs(n[None, :] - n[:, None]) * layout.d_e
    theta = np.arcsin(np.clip(dz / dist, -1.0, 1.0))
    return attenuation(dist, theta, layout) * np.exp(
        2j * np.pi / layout.wavelength * dist)


def fraunhofer_distance(layout: ArrayLayout) -> float:
    """``2 D^2 / lambda`` for the aperture diagonal of one panel."""
    height = (layout.n_e - 1) * layout.d_e
    width = (layout.n_rf - 1) * layout.d_rf
    return 2 * (height ** 2 + width ** 2) / layout.wavelength

