"""Synthetic power and detuning sweeps shared by the sweep and acceptance tests."""
import numpy as np

from omcool.model import TWO_PI, DriveConfig, HeatingModel, SystemParams
from omcool.sweeps import detuning_grid, synthesize_sweep
from tests.conftest import photons_for_rate

ETA = 0.064
HEATING = HeatingModel(alpha2=1.2e-6)
DELTA = -TWO_PI * 10e6
DELTA_LO = TWO_PI * 120e6
# cooling / blue-probe scattering rates (Hz) of the two-tone calibration runs
CALIBRATION_RATES = [(3.8e6, 1.9e6), (3.0e6, 1.6e6), (4.5e6, 2.2e6)]


def calibration_drives(p: SystemParams) -> dict:
    out = {}
    for i, (gc, gb) in enumerate(CALIBRATION_RATES):
        n_c = photons_for_rate(p, TWO_PI * gc, 0.0)
        n_b = photons_for_rate(p, TWO_PI * gb, 2 * DELTA)
        out[f"c{i}"] = DriveConfig.from_cooling_detuning(-p.omega_m, p.omega_m, n_c, n_b,
                                                         DELTA, DELTA_LO)
    return out


def power_sweep(out_dir, p: SystemParams, seed=3, averages=1e6, points=12):
    drives = calibration_drives(p)
    for i, n in enumerate(np.geomspace(5, 800, points)):
        drives[f"p{i:02d}"] = DriveConfig.from_cooling_detuning(-p.omega_m, p.omega_m, float(n),
                                                                0.0, DELTA, DELTA_LO)
    return synthesize_sweep(out_dir, p, drives, ETA, seed=seed, averages=averages,
                            heating=HEATING, anchor_run="p00")


def detuning_sweep(out_dir, p: SystemParams, seed=5, averages=1e6, points=17):
    drives = calibration_drives(p)
    grid = detuning_grid(TWO_PI * np.linspace(-7.2e9, -3.2e9, points), p, power_w=500e-6,
                         coupling_efficiency=0.4, delta=DELTA, delta_lo=DELTA_LO)
    for i, d in enumerate(grid):
        drives[f"d{i:02d}"] = d
    return synthesize_sweep(out_dir, p, drives, ETA, seed=seed, averages=averages,
                            heating=HEATING)
