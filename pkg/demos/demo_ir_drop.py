"""
Wire resistance on a crossbar
=============================

The line-relaxation solver against the dense nodal solve, then the loss
of column current as segment resistance grows.
"""

import numpy as np

from aimc_ptcal import dense_nodal_currents, ir_drop_currents

rng = np.random.default_rng(1)
g = rng.uniform(0, 25, (8, 8))  # uS
v = rng.uniform(0, 0.2, 8)      # V

fast = ir_drop_currents(g, v, 5.0)
dense = dense_nodal_currents(g, v, 5.0)
print("max |relaxed - dense| / max|dense| =", np.abs(fast - dense).max() / np.abs(dense).max())

# far columns lose the most; larger tiles suffer more
g = rng.uniform(0, 25, (256, 256))
v = np.full(256, 0.2)
ideal = v @ g
for R in (0.0, 0.35, 2.0, 10.0):
    i = ir_drop_currents(g, v, R)
    print(f"R = {R:5.2f} ohm   near column {i[0] / ideal[0]:.3f}   far column {i[-1] / ideal[-1]:.3f}")
