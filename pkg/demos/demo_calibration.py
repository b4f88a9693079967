"""
Post-training range calibration on one tile
===========================================

A heavy-tailed input distribution and large weights push the bitline
currents past the ADC range.  Setting the DAC range from a percentile of
the inputs and shrinking per-column conductance ranges both help, and
together they help most.
"""

import numpy as np

from aimc_ptcal import (CalibrationConfig, ForwardMode, NoiseModel, RngStream, TileHardwareConfig,
                        optimize_conductance_ranges, optimize_input_range, program_tile, tile_forward)
from aimc_ptcal.mapping import make_tile

hw = TileHardwareConfig(rows=64, cols=16, i_sat=5.0)
rng = np.random.default_rng(0)
w = np.clip(np.abs(rng.normal(0.8, 0.2, (64, 16))), 0, 1) * np.where(rng.random((64, 16)) < 0.8, 1, -1)
x = rng.laplace(0, 1, (512, 64))
samples, test = x[:256], x[256:]
cfg = CalibrationConfig.for_hardware(hw)


def error(tile):
    prog = program_tile(tile, NoiseModel(), RngStream(0))
    y = tile_forward(prog, test, ForwardMode.inference(20.0, ir_drop=False), RngStream(1), NoiseModel())
    return np.linalg.norm(y - test @ w) / np.linalg.norm(test @ w)


plain = make_tile(w, hw, input_range=1.0)
inp = plain.copy()
inp.input_range = optimize_input_range(samples, cfg.percentile_k)
cond, _ = optimize_conductance_ranges(plain, samples, cfg)
both, report = optimize_conductance_ranges(inp, samples, cfg)

for name, tile in (("none", plain), ("input range", inp), ("conductance range", cond), ("both", both)):
    print(f"{name:>18}: relative error {error(tile):.3f}")
print("column caps after calibration (uS):", np.round(both.g_col_cap, 1))
