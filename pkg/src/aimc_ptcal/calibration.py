"""Post-training input-range and conductance-range optimization.

Both procedures work tile by tile on input samples captured from a
digital forward pass:

* input range: the DAC full scale is set to the ``K``-th percentile of the
  magnitudes of every input element reaching the tile.  Conductances are
  never touched, so this can be re-run without reprogramming.
* conductance range: each bitline is first reset to the full ``g_max``
  range, its current distribution over the samples is estimated, and if
  the estimated peak ``mu + L*sigma`` exceeds the ADC saturation current the
  column's conductances are shrunk by ``I_S / I_P`` (never below the floor
  ``g_min``).  The digital output scale absorbs every rescale.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from .core import AnalogTile, RngStream, TileHardwareConfig
from .errors import CalibrationDataError, DegenerateRangeError, InvalidConfigError

DETERMINISTIC, SAMPLED = "deterministic", "sampled"


@dataclass(frozen=True)
class CalibrationConfig:
    n_samples: int = 2
    percentile_k: float = 99.995
    n_std: float = 2.0
    g_min_floor: Optional[float] = None
    i_sat: float = 50.0
    v_read: float = 0.2
    y_factor: float = 127 / 50.0
    g_max: float = 25.0
    peak_estimator: str = DETERMINISTIC

    def __post_init__(self):
        if self.g_min_floor is None:
            object.__setattr__(self, "g_min_floor", self.g_max / 4)
        if not 0 < self.g_min_floor <= self.g_max:
            raise InvalidConfigError("g_min_floor must lie in (0, g_max]")
        if not 0 < self.percentile_k <= 100:
            raise InvalidConfigError("percentile_k must lie in (0, 100]")
        if self.n_std < 0 or self.n_samples < 1:
            raise InvalidConfigError("n_std must be >= 0 and n_samples >= 1")
        if min(self.i_sat, self.v_read, self.y_factor, self.g_max) <= 0:
            raise InvalidConfigError("i_sat, v_read, y_factor and g_max must be positive")
        if self.peak_estimator not in (DETERMINISTIC, SAMPLED):
            raise InvalidConfigError(f"unknown peak estimator {self.peak_estimator!r}")

    @classmethod
    def for_hardware(cls, hw: TileHardwareConfig, **overrides) -> "CalibrationConfig":
        base = dict(i_sat=hw.i_sat, v_read=hw.v_read, y_factor=hw.y_factor, g_max=hw.g_max)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class ColumnReport:
    g_col_cap: np.ndarray
    ip_before: np.ndarray
    ip_after: np.ndarray
    saturating: np.ndarray
    floored: np.ndarray
    skipped: np.ndarray


@dataclass
class CalibrationReport:
    input_ranges: Dict[tuple, float] = field(default_factory=dict)
    columns: Dict[tuple, ColumnReport] = field(default_factory=dict)

    FIELDS = ("layer", "tile", "column", "input_range", "g_col_cap", "ip_before", "ip_after",
              "saturating", "floored", "skipped")

    def rows(self):
        keys = sorted(set(self.input_ranges) | set(self.columns))
        for key in keys:
            xr = self.input_ranges.get(key, float("nan"))
            col = self.columns.get(key)
            if col is None:
                yield (*key, -1, xr, "", "", "", "", "", "")
                continue
            for j in range(len(col.g_col_cap)):
                yield (*key, j, xr, col.g_col_cap[j], col.ip_before[j], col.ip_after[j],
                       int(col.saturating[j]), int(col.floored[j]), int(col.skipped[j]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.FIELDS)
        for row in self.rows():
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return buf.getvalue()


def collect_input_samples(network, data: Iterable, n: int) -> Dict[tuple, np.ndarray]:
    """Capture the digital inputs reaching every tile over ``n`` batches."""
    if n < 1:
        raise InvalidConfigError("need at least one sample batch")
    record: Dict[tuple, list] = {}
    seen = 0
    for batch in data:
        network.forward(batch, record=record)
        seen += 1
        if seen == n:
            break
    if seen == 0:
        raise CalibrationDataError("calibration data source is empty")
    if seen < n:
        raise CalibrationDataError(f"calibration data yielded {seen} batches, {n} requested")
    return {key: np.concatenate(parts, axis=0) for key, parts in record.items()}


def optimize_input_range(samples, k: float) -> float:
    """``k``-th percentile (nearest rank) of ``|samples|``."""
    if not 0 < k <= 100:
        raise InvalidConfigError("percentile must lie in (0, 100]")
    mag = np.abs(np.asarray(samples, dtype=float)).ravel()
    if mag.size == 0:
        raise CalibrationDataError("no input samples")
    xr = float(np.percentile(mag, k, method="inverted_cdf"))
    if not xr > 0:
        raise DegenerateRangeError("input samples give a zero input range")
    return xr


def _normalized(tile, samples):
    x = np.clip(np.asarray(samples, dtype=float) / tile.input_range, -1.0, 1.0)
    keep = np.any(x != 0, axis=1)
    return x[keep]


def column_peak_currents(tile: AnalogTile, samples, cfg: CalibrationConfig, rng: Optional[RngStream] = None):
    """Estimated peak column current per bitline, in ADC counts.

    Taken over both polarities of the differential pair.  Returns ``None``
    when no sample vector has a nonzero element.
    """
    x = _normalized(tile, samples)
    if x.shape[0] == 0:
        return None
    gen = rng.generator() if cfg.peak_estimator == SAMPLED and rng is not None else None
    if cfg.peak_estimator == SAMPLED and gen is None:
        raise InvalidConfigError("the sampled peak estimator needs an RngStream")
    peaks = []
    for g in (tile.g_plus, tile.g_minus):
        i = np.abs(cfg.v_read * (x @ g) * cfg.y_factor)
        mu, sigma = i.mean(axis=0), i.std(axis=0)
        if gen is None:
            peaks.append(mu + cfg.n_std * sigma)
        else:
            peaks.append(mu + cfg.n_std * gen.normal(0.0, 1.0, mu.shape) * sigma)
    return np.maximum(peaks[0], peaks[1])


def _rescale_columns(tile, factor):
    tile.g_plus = tile.g_plus * factor
    tile.g_minus = tile.g_minus * factor
    tile.g_col_cap = tile.g_col_cap * factor
    tile.out_scale = tile.out_scale / factor


def optimize_conductance_ranges(tile: AnalogTile, samples, cfg: CalibrationConfig,
                                rng: Optional[RngStream] = None):
    """Per-bitline conductance range optimization.

    Returns ``(new_tile, ColumnReport)``; the input tile is left untouched.
    """
    tile = tile.copy()
    cols = tile.shape[1]
    # reset every column to the full conductance range
    _rescale_columns(tile, cfg.g_max / tile.g_col_cap)
    tile.g_col_cap = np.full(cols, cfg.g_max)
    limit = cfg.i_sat * cfg.y_factor

    ip = column_peak_currents(tile, samples, cfg, rng)
    if ip is None:
        nan = np.full(cols, np.nan)
        skipped = np.ones(cols, bool)
        return tile, ColumnReport(tile.g_col_cap.copy(), nan, nan.copy(), ~skipped, ~skipped, skipped)

    saturating = ip > limit
    new_cap = np.full(cols, cfg.g_max)
    new_cap[saturating] = np.maximum(cfg.g_max * limit / ip[saturating], cfg.g_min_floor)
    floored = saturating & (new_cap <= cfg.g_min_floor)
    factor = new_cap / cfg.g_max
    _rescale_columns(tile, factor)
    tile.g_col_cap = new_cap.copy()

    ip_after = column_peak_currents(tile, samples, cfg, rng)
    # rounding can leave a column one ulp over the limit; nudge it down
    for _ in range(8):
        over = (ip_after > limit) & ~floored
        if not over.any():
            break
        nudge = np.where(over, np.nextafter(limit / ip_after, 0.0), 1.0)
        _rescale_columns(tile, nudge)
        ip_after = column_peak_currents(tile, samples, cfg, rng)
    return tile, ColumnReport(tile.g_col_cap.copy(), ip, ip_after, saturating, floored,
                              np.zeros(cols, bool))


def calibrate_network(network, data, cfg: CalibrationConfig, input_range: bool = True,
                      conductance_range: bool = True, rng: Optional[RngStream] = None):
    """Apply the selected procedures to every tile of ``network``.

    Input ranges are set first so that conductance calibration sees the
    voltages the final DAC settings produce.  Returns ``(network, report)``.
    """
    net = network.copy()
    samples = collect_input_samples(net, data, cfg.n_samples)
    report = CalibrationReport()
    for key in net.tile_keys():
        tile = net.tile(key)
        if input_range:
            tile = tile.copy()
            tile.input_range = optimize_input_range(samples[key], cfg.percentile_k)
            report.input_ranges[key] = tile.input_range
        if conductance_range:
            sub = None if rng is None else rng.child(*key)
            tile, report.columns[key] = optimize_conductance_ranges(tile, samples[key], cfg, sub)
        net.set_tile(key, tile)
    return net, report
