"""A small Monte Carlo sweep over transmit power and microstrip count.

Same protocol as the CLI: random-weight first look, MUSIC, beamformer
design from the estimates, second look through the designed receiver.
The grid is coarsened so the run takes well under a minute.
"""

import numpy as np

from holoisac.estimation import SearchGrid
from holoisac.geometry import ArrayLayout
from holoisac.simulate import SimConfig, run_experiment

cfg = SimConfig(layout=ArrayLayout.from_frequency(n_e=64),
                p_max_grid=(-10.0, 5.0, 20.0), n_rf_grid=(4, 6), trials=4, seed=1,
                grid=SearchGrid.default(r_step=0.5, theta_step_deg=1.0))

print(f"noise {cfg.noise_dbm:.2f} dBm, {cfg.trials} trials per cell")
print(" p_max  n_rf  range RMSE  elev RMSE  sum rate  infeasible")
for m in run_experiment(cfg):
    print(f"{m.p_max_dbm:6.1f}  {m.n_rf:4d}  {m.rmse_range_m:8.2f} m  "
          f"{m.rmse_elev_deg:6.2f} deg  {m.mean_sum_rate:8.3f}  {m.infeasible_count:4d}")
