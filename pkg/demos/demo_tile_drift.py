"""
Drift on a single crossbar tile
===============================

Program one 512x512 tile with clipped Gaussian weights and watch the
matrix-vector error grow as the conductances relax.  Everything runs with
the default hardware and noise settings; drift compensation stays off.
"""

import numpy as np

from aimc_ptcal import ForwardMode, NoiseModel, RngStream, TileHardwareConfig, program_tile, tile_forward
from aimc_ptcal.mapping import make_tile

hw = TileHardwareConfig()
noise = NoiseModel()
rs = RngStream(0)

gen = rs.child(0).generator()
w = np.clip(gen.normal(0, 0.25, (hw.rows, hw.cols)), -1, 1)
x = gen.uniform(-1, 1, (512, hw.rows))
ref = x @ w

# program once, read many times
tile = program_tile(make_tile(w, hw), noise, rs.child(1))

for k, t in enumerate((20.0, 3600.0, 86400.0, 31536000.0)):
    y = tile_forward(tile, x, ForwardMode.inference(t), rs.child(2, k), noise)
    err = 100 * np.linalg.norm(y - ref) / np.linalg.norm(ref)
    print(f"t = {t:>10.0f} s   L2 error {err:5.1f} %")

# with drift compensation a global gain estimate recovers much of the decay
y = tile_forward(tile, x, ForwardMode.inference(31536000.0, drift_compensation=True), rs.child(3), noise)
print(f"one year, compensated: {100 * np.linalg.norm(y - ref) / np.linalg.norm(ref):.1f} %")
