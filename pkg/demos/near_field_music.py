"""Locate one target with MUSIC behind a randomly tuned receive DMA.

The receive panel only exposes ``n_rf`` outputs, so the search runs over
the beamspace response of the array. A 32-element strip has its
Fraunhofer distance at about 0.2 m; a 512-element strip pushes it past
50 m, which is where range information comes from. The echo of a 100 mW probe
through random weights is weak, so even noise far below the thermal floor
moves the estimate.
"""

import numpy as np

from holoisac.beamforming import PhaseCodebook
from holoisac.dma import MicrostripParams
from holoisac.estimation import SearchGrid, estimate_targets
from holoisac.geometry import ArrayLayout, Scenario, SphericalCoord, fraunhofer_distance, radar_channel, si_channel
from holoisac.simulate import initial_beamformers, synth_rx_snapshots

rng = np.random.default_rng(0)
grid = SearchGrid.default()

for n_e in (32, 64, 512):
    print(f"N_E={n_e}: Fraunhofer distance {fraunhofer_distance(ArrayLayout.from_frequency(n_e=n_e)):.2f} m")

layout = ArrayLayout.from_frequency(n_rf=4, n_e=32)
params = MicrostripParams.default(layout)
truth = SphericalCoord(grid.r_axis[87], grid.theta_axis[101], np.pi / 2)

bf = initial_beamformers(layout, params, si_channel(layout), PhaseCodebook(10), 4, 0.1, rng)
h_r = radar_channel(Scenario((truth,)), layout)

# echo power against combined noise power behind the receive DMA
echo = np.linalg.norm(bf.rx_chain.conj().T @ h_r @ bf.tx_chain @ bf.v_digital) ** 2
for sigma2 in (0.0, 1e-18, 1e-16):
    if sigma2:
        snr = echo / (np.linalg.norm(bf.rx_chain) ** 2 * sigma2)
        print(f"beamspace SNR at sigma2={sigma2:.0e} W: {10 * np.log10(snr):.1f} dB")
    block = synth_rx_snapshots(h_r, bf, 200, sigma2, rng)
    (est,), _ = estimate_targets(block, 1, grid, bf.w_rx, bf.p_rx, layout)
    c = est.coord
    print(f"sigma2={sigma2:.0e} W: estimate r={c.r:.3f} m theta={np.rad2deg(c.theta):.2f} deg "
          f"(truth {truth.r:.1f} m, {np.rad2deg(truth.theta):.1f} deg)")
