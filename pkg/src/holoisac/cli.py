"""Command-line sweep runner.

Reads a flat JSON config, runs the Monte Carlo sweep and writes
``metrics.csv`` (one row per ``(p_max, n_rf)`` cell), ``manifest.json`` and,
with ``--verbose``, ``trials.csv``. Without ``--full-scale`` and unless the
config sets ``n_e``, panels are shrunk to 64 elements per microstrip.
"""

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .beamforming import DEFAULT_GAMMA_DBM
from .estimation import SearchGrid
from .geometry import ArrayLayout
from .simulate import (MetricsRecord, ScenarioDistribution, SimConfig,
                       TrialResult, run_experiment)

log = logging.getLogger("holoisac")

DESK_N_E = 64

METRICS_COLUMNS = ("p_max_dbm", "n_rf", "rmse_range_m", "rmse_elev_deg",
                   "rmse_azim_deg", "mean_sum_rate_bpshz", "trials_used",
                   "infeasible_count")
TRIAL_COLUMNS = ("p_max_dbm", "n_rf", "trial", "feasible", "sum_rate_bpshz",
                 "snr_radar", "snr_dl", "max_err_range_m", "max_err_elev_deg",
                 "max_err_azim_deg")

# flat config keys and their defaults; None means "derived"
DEFAULTS: Dict[str, object] = {
    "frequency_hz": 120e9,
    "n_e": 512,
    "d_e": None,
    "d_rf": None,
    "d_p": 0.02,
    "kappa_abs": 0.0033,
    "b_gain": 2.0,
    "p_max_grid": [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
    "n_rf_grid": [4, 5, 6],
    "t_slots": 200,
    "trials": 10,
    "bandwidth_hz": 150e3,
    "noise_dbm": None,
    "seed": 0,
    "n_targets": 3,
    "n_users": 2,
    "l_antennas": 2,
    "ula_spacing": None,
    "gamma_dbm": DEFAULT_GAMMA_DBM,
    "codebook_bits": 10,
    "waveguide_alpha": 0.0,
    "waveguide_beta": None,
    "r_min": 1.0,
    "r_max": 25.0,
    "theta_min_deg": 0.0,
    "theta_max_deg": 90.0,
    "phi_deg": 90.0,
    "grid_r_step": 0.1,
    "grid_theta_step_deg": 0.5,
    "grid_phi_deg": 90.0,
    "grid_phi_step_deg": 2.0,
    "refine_levels": 2,
    "workers": 1,
}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; the message names the key."""


@dataclass
class RunManifest:
    config_path: Optional[str]
    config: SimConfig
    resolved: Dict[str, object]
    out_dir: str
    version: str = __version__
    timings: Dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        body = {"config_path": self.config_path, "resolved_config": self.resolved,
                "out_dir": self.out_dir, "version": self.version,
                "timings_s": self.timings,
                "notes": {"infeasible_trials": "counted in infeasible_count, "
                          "excluded from mean_sum_rate_bpshz, RMSE uses the "
                          "phase-1 estimates for them"}}
        return json.dumps(body, indent=2, sort_keys=True)


def _number(key, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if kind is int and float(value) != int(value):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    return kind(value)


def resolve_config(raw: Dict[str, object]):
    """Merge ``raw`` over the defaults and build the ``SimConfig``.

    ``n_rf`` is accepted as shorthand for a one-value ``n_rf_grid``.

    Returns
    -------
    config : SimConfig
    resolved : dict
        Every key with the value actually used, defaults included.
    """
    raw = dict(raw)
    if "n_rf" in raw:
        if "n_rf_grid" in raw:
            raise ConfigError("n_rf: give either n_rf or n_rf_grid, not both")
        raw["n_rf_grid"] = [raw.pop("n_rf")]
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown config key")
    cfg = {**DEFAULTS, **raw}

    ints = {"n_e", "t_slots", "trials", "seed", "n_targets", "n_users",
            "l_antennas", "codebook_bits", "refine_levels", "workers"}
    for key, value in list(cfg.items()):
        if key in ("p_max_grid", "n_rf_grid"):
            if not isinstance(value, list) or not value:
                raise ConfigError(f"{key}: expected a non-empty list")
            kind = int if key == "n_rf_grid" else float
            cfg[key] = [_number(key, v, kind) for v in value]
        elif value is not None:
            cfg[key] = _number(key, value, int if key in ints else float)
    for key in ("n_e", "t_slots", "trials", "n_targets", "n_users",
                "l_antennas", "codebook_bits", "workers"):
        if cfg[key] < 1:
            raise ConfigError(f"{key}: must be >= 1")
    for n_rf in cfg["n_rf_grid"]:
        if n_rf < 1:
            raise ConfigError("n_rf_grid: microstrip counts must be >= 1")
        if cfg["n_targets"] >= n_rf:
            raise ConfigError(f"n_targets: {cfg['n_targets']} targets need more "
                              f"than {n_rf} microstrips for a noise subspace")
        if cfg["n_users"] * cfg["l_antennas"] > n_rf:
            raise ConfigError(f"n_users: {cfg['n_users']}x{cfg['l_antennas']} "
                              f"streams exceed {n_rf} microstrips")
    if cfg["n_users"] > cfg["n_targets"]:
        raise ConfigError("n_users: users must be among the targets")
    for key in ("frequency_hz", "bandwidth_hz", "d_p", "grid_r_step",
                "grid_theta_step_deg", "grid_phi_step_deg"):
        if cfg[key] <= 0:
            raise ConfigError(f"{key}: must be > 0")

    try:
        layout = ArrayLayout.from_frequency(
            n_rf=cfg["n_rf_grid"][0], n_e=cfg["n_e"],
            frequency_hz=cfg["frequency_hz"], d_p=cfg["d_p"], d_e=cfg["d_e"],
            d_rf=cfg["d_rf"], kappa_abs=cfg["kappa_abs"], b_gain=cfg["b_gain"])
    except ValueError as exc:
        raise ConfigError(f"layout: {exc}") from exc
    try:
        dist = ScenarioDistribution((cfg["r_min"], cfg["r_max"]),
                                    (cfg["theta_min_deg"], cfg["theta_max_deg"]),
                                    cfg["phi_deg"])
    except ValueError as exc:
        raise ConfigError(f"r_min/r_max/theta_*: {exc}") from exc
    grid = SearchGrid.default(
        r_bounds=(cfg["r_min"], cfg["r_max"]), r_step=cfg["grid_r_step"],
        theta_bounds_deg=(cfg["theta_min_deg"], cfg["theta_max_deg"]),
        theta_step_deg=cfg["grid_theta_step_deg"], phi_deg=cfg["grid_phi_deg"],
        phi_step_deg=cfg["grid_phi_step_deg"], refine_levels=cfg["refine_levels"])
    config = SimConfig(
        layout=layout, distribution=dist, p_max_grid=tuple(cfg["p_max_grid"]),
        n_rf_grid=tuple(cfg["n_rf_grid"]), t_slots=cfg["t_slots"],
        trials=cfg["trials"], bandwidth_hz=cfg["bandwidth_hz"],
        noise_dbm=cfg["noise_dbm"], seed=cfg["seed"], n_targets=cfg["n_targets"],
        n_users=cfg["n_users"], l_antennas=cfg["l_antennas"],
        ula_spacing=cfg["ula_spacing"], gamma_dbm=cfg["gamma_dbm"],
        codebook_bits=cfg["codebook_bits"], waveguide_alpha=cfg["waveguide_alpha"],
        waveguide_beta=cfg["waveguide_beta"], grid=grid)

    cfg["d_e"] = layout.d_e
    cfg["d_rf"] = layout.d_rf
    cfg["noise_dbm"] = config.noise_dbm
    cfg["ula_spacing"] = config.spacing
    cfg["wavelength_m"] = layout.wavelength
    return config, cfg


def load_config(path) -> SimConfig:
    """Parse a JSON config file into a ``SimConfig`` with the reference-scenario defaults (N_E = 512)."""
    return _read_config(path)[0]


def _read_config(path):
    if path is None:
        raw = {}
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from exc
        try:
            raw = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: not valid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a JSON object")
    config, resolved = resolve_config(raw)
    return config, resolved, raw


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_atomic(path, rows: List[List[str]], header):
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".csv", dir=folder)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_rows(records: List[MetricsRecord]):
    return [[_fmt(getattr(r, k)) for k in
             ("p_max_dbm", "n_rf", "rmse_range_m", "rmse_elev_deg",
              "rmse_azim_deg", "mean_sum_rate", "trials_used", "infeasible_count")]
            for r in records]


def _trial_row(r: TrialResult):
    e = np.max(r.errors, axis=0)
    return [_fmt(r.p_max_dbm), _fmt(r.n_rf), _fmt(r.trial), _fmt(r.feasible),
            _fmt(r.sum_rate), _fmt(r.snr_radar), _fmt(r.snr_dl), _fmt(e[0]),
            _fmt(np.rad2deg(e[1])), _fmt(np.rad2deg(e[2]))]


def run(manifest: RunManifest, verbose=False) -> int:
    """Execute the sweep described by ``manifest`` and write the artifacts."""
    out = manifest.out_dir
    try:
        os.makedirs(out, exist_ok=True)
        probe = tempfile.NamedTemporaryFile(dir=out, prefix=".probe-")
        probe.close()
    except OSError as exc:
        log.error("output directory %s is not writable: %s", out, exc)
        return 3

    trials = []
    t0 = time.perf_counter()
    records = run_experiment(manifest.config, workers=manifest.resolved.get("workers"),
                             trial_sink=trials.append if verbose else None)
    manifest.timings["experiment"] = time.perf_counter() - t0

    _write_atomic(os.path.join(out, "metrics.csv"), metrics_rows(records), METRICS_COLUMNS)
    if verbose:
        _write_atomic(os.path.join(out, "trials.csv"),
                      [_trial_row(r) for r in trials], TRIAL_COLUMNS)
    manifest.timings["total"] = time.perf_counter() - t0
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json() + "\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="holoisac", description=__doc__.splitlines()[0])
    p.add_argument("--config", metavar="PATH", help="flat JSON config file")
    p.add_argument("--out", metavar="DIR", default="results", help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--trials", type=int, help="override the trials per cell")
    p.add_argument("--full-scale", action="store_true",
                   help="keep 512 elements per microstrip")
    p.add_argument("--verbose", action="store_true", help="also write trials.csv")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _, _, raw = _read_config(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.trials is not None:
            raw["trials"] = args.trials
        if args.full_scale:
            raw["n_e"] = DEFAULTS["n_e"]
        elif "n_e" not in raw:
            raw["n_e"] = DESK_N_E
        config, resolved = resolve_config(raw)
    except ConfigError as exc:
        print(f"holoisac: invalid configuration: {exc}", file=sys.stderr)
        return 2
    manifest = RunManifest(config_path=args.config, config=config,
                           resolved=resolved, out_dir=args.out)
    return run(manifest, verbose=args.verbose)


if __name__ == "__main__":
    sys.exit(main())
