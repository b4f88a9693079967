"""
Hardware-aware finetuning and the ablation at desk scale
========================================================

A two-moons MLP is pretrained digitally, finetuned with weight and output
noise plus I/O quantization, mapped onto small saturation-prone tiles and
evaluated with and without post-training calibration.  Three seeds keep
this under a minute; the acceptance suite uses ten.
"""

import numpy as np

from aimc_ptcal.experiments import AblationCell, ablation_accuracies, default_config

cfg = default_config("ablation", repetitions=3)
cells = {
    "no calibration": AblationCell(True, False, False, False, False),
    "input range PT": AblationCell(True, False, False, False, True),
    "conductance PT": AblationCell(True, False, True, False, False),
    "both PT": AblationCell(True, False, True, False, True),
    "learned ranges": AblationCell(True, True, False, True, False),
    "learned + PT": AblationCell(True, True, True, True, True),
}
acc, _ = ablation_accuracies(cfg, tuple(cells.values()), times=(None,))
for name, col in zip(cells, acc[:, :, 0].T):
    print(f"{name:>15}: {col.mean():.3f} +- {col.std(ddof=1) / np.sqrt(len(col)):.3f}")
