"""Tile forward pass: quantizers, device noise, drift and IR drop composed.

All three modes report outputs in the digital (unit-weight) domain:
``y = out_scale * (x @ W_eff) + out_offset`` where ``W_eff`` reduces to
``(G+ - G-) / g_max`` when every non-ideality is switched off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    AnalogTile,
    NoiseModel,
    RngStream,
    TileHardwareConfig,
    adc_quantize,
    apply_drift,
    dac_quantize,
    program_conductances,
    read_noise,
)
from .errors import InvalidConfigError, ShapeError
from .irdrop import ir_drop_currents, ir_drop_transfer

IDEAL, INFERENCE, TRAINING = "ideal", "inference", "training"


@dataclass(frozen=True)
class ForwardMode:
    variant: str = IDEAL
    at_time: Optional[float] = None
    enable_ir_drop: bool = False
    enable_quantization: bool = False
    drift_compensation: bool = False

    def __post_init__(self):
        if self.variant not in (IDEAL, INFERENCE, TRAINING):
            raise InvalidConfigError(f"unknown forward mode {self.variant!r}")
        if self.variant == IDEAL and (self.enable_ir_drop or self.enable_quantization
                                      or self.at_time is not None):
            raise InvalidConfigError("ideal mode cannot enable non-idealities")
        if self.variant == TRAINING and (self.at_time is not None or self.enable_ir_drop):
            raise InvalidConfigError("training mode has no read time and no IR drop")
        if self.variant == INFERENCE and self.at_time is None:
            raise InvalidConfigError("inference mode needs at_time")

    @classmethod
    def ideal(cls):
        return cls(IDEAL)

    @classmethod
    def inference(cls, at_time, ir_drop=True, quantization=True, drift_compensation=False):
        return cls(INFERENCE, at_time, ir_drop, quantization, drift_compensation)

    @classmethod
    def training(cls, quantization=True):
        return cls(TRAINING, None, False, quantization)


def saturation_current(config: TileHardwareConfig) -> float:
    """Column current with ten devices at ``g_max`` and full-scale inputs (uA)."""
    return 10.0 * config.g_max * config.v_read


def program_tile(tile: AnalogTile, noise: NoiseModel, rng: RngStream, at: float = 0.0) -> AnalogTile:
    """Program the tile's target conductances.

    Returns a new tile holding the programmed conductances.  The drift
    exponents are tied to ``rng`` from here on.
    """
    cfg = tile.config
    noise.check_prog_std(cfg.g_max)
    out = tile.copy()
    out.g_plus = program_conductances(tile.g_plus, noise, rng.child(0), cfg.g_max, upper=tile.g_col_cap)
    out.g_minus = program_conductances(tile.g_minus, noise, rng.child(1), cfg.g_max, upper=tile.g_col_cap)
    out.programmed_at = float(at)
    out.drift_stream = rng.child(2)
    return out


def drifted_conductances(tile: AnalogTile, t: float, noise: NoiseModel):
    s = tile.drift_stream
    gp = apply_drift(tile.g_plus, t, tile.programmed_at, noise, s.child(0))
    gm = apply_drift(tile.g_minus, t, tile.programmed_at, noise, s.child(1))
    return gp, gm


def _drift_compensation(tile, gp, gm):
    # Global drift compensation: ratio of the summed absolute response to an
    # all-ones probe before and after drift, applied digitally.
    ref0 = np.abs((tile.g_plus - tile.g_minus).sum(axis=0)).sum()
    ref = np.abs((gp - gm).sum(axis=0)).sum()
    return ref0 / ref if ref > 0 else 1.0


def _column_currents(g, v, R, use_transfer):
    if R == 0:
        return v @ g
    if use_transfer:
        return v @ ir_drop_transfer(g, R)
    return ir_drop_currents(g, v, R)


def tile_forward(tile: AnalogTile, x, mode: ForwardMode, rng: Optional[RngStream] = None,
                 noise: Optional[NoiseModel] = None) -> np.ndarray:
    """Run one tile on an input vector or a ``(batch, rows)`` batch."""
    x = np.asarray(x, dtype=float)
    rows, cols = tile.shape
    if x.shape[-1] != rows or x.ndim > 2:
        raise ShapeError(f"input of shape {x.shape} does not match tile with {rows} rows")
    single = x.ndim == 1
    xb = x[None, :] if single else x
    cfg = tile.config
    noise = NoiseModel() if noise is None else noise

    if mode.variant == IDEAL:
        y = xb @ tile.unit_weights()
    elif mode.variant == TRAINING:
        y = _training_forward(tile, xb, mode, rng, noise)
    else:
        y = _inference_forward(tile, xb, mode, rng, noise)
    y = tile.out_scale * y + tile.out_offset
    return y[0] if single else y


def _normalized_input(tile, xb, mode, gen, noise):
    xr = tile.input_range
    if mode.enable_quantization:
        xb = dac_quantize(xb, xr, tile.config.dac_bits)
    xn = xb / xr
    if noise.sigma_inp > 0:
        xn = xn + noise.sigma_inp * gen.standard_normal(xn.shape)
    return xn


def _training_forward(tile, xb, mode, rng, noise):
    cfg = tile.config
    gen = _gen(rng, noise.sigma_w or noise.sigma_inp or noise.sigma_out)
    xn = _normalized_input(tile, xb, mode, gen, noise)
    w = tile.unit_weights()
    if noise.sigma_w > 0:
        w = w + noise.sigma_w * gen.standard_normal(w.shape)
    p = xn @ w
    if noise.sigma_out > 0:
        p = p + noise.sigma_out * gen.standard_normal(p.shape)
    if mode.enable_quantization:
        p = adc_quantize(p * cfg.unit_current, cfg.i_sat, cfg.adc_bits) / cfg.unit_current
    return p * tile.input_range


def _inference_forward(tile, xb, mode, rng, noise):
    if not tile.is_programmed:
        raise InvalidConfigError("inference needs a programmed tile (see program_tile)")
    cfg = tile.config
    gen = _gen(rng, True)
    gp, gm = drifted_conductances(tile, mode.at_time, noise)
    comp = _drift_compensation(tile, gp, gm) if mode.drift_compensation else 1.0
    if any(noise.read_coeffs):
        seeds = gen.integers(0, 2**63, size=2)
        gp = read_noise(gp, noise, RngStream(int(seeds[0])))
        gm = read_noise(gm, noise, RngStream(int(seeds[1])))

    v = _normalized_input(tile, xb, mode, gen, noise) * cfg.v_read
    R = cfg.wire_resistance if mode.enable_ir_drop else 0.0
    # a transfer matrix pays off once the batch exceeds the row count
    use_transfer = xb.shape[0] > tile.shape[0]
    currents = []
    for g in (gp, gm):
        i = _column_currents(g, v, R, use_transfer)
        if noise.sigma_out > 0:
            # split so the differential output carries sigma_out in total
            i = i + noise.sigma_out / np.sqrt(2.0) * cfg.unit_current * gen.standard_normal(i.shape)
        if mode.enable_quantization:
            i = adc_quantize(i, cfg.i_sat, cfg.adc_bits)
        currents.append(i)
    i_diff = currents[0] - currents[1]
    return i_diff / cfg.unit_current * tile.input_range * comp


def _gen(rng, needed):
    if not needed:
        return None
    if rng is None:
        raise InvalidConfigError("a noisy forward pass needs an RngStream")
    return rng.generator()
