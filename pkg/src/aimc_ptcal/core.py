"""Domain types, RNG streams, quantizers and PCM device models.

Units used throughout the package: conductances in microsiemens (uS),
voltages in volts, currents in microamperes (uA), wire resistance in ohms,
times in seconds.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidConfigError, MappingDomainError, ShapeError, TemporalOrderError

_U64 = 2**64


@dataclass(frozen=True)
class TileHardwareConfig:
    """Static description of one crossbar tile and its periphery.

    ``i_sat`` defaults to the current produced when ten devices at ``g_max``
    see a full-scale input, and ``y_factor`` (ADC counts per uA) to the value
    that maps ``i_sat`` onto the outermost ADC level.
    """

    rows: int = 512
    cols: int = 512
    dac_bits: int = 8
    adc_bits: int = 8
    g_max: float = 25.0
    wire_resistance: float = 0.35
    v_read: float = 0.2
    i_sat: Optional[float] = None
    y_factor: Optional[float] = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidConfigError(f"tile must have rows, cols >= 1, got {self.rows}x{self.cols}")
        if self.dac_bits < 1 or self.adc_bits < 1:
            raise InvalidConfigError("dac_bits and adc_bits must be >= 1")
        if not self.g_max > 0:
            raise InvalidConfigError(f"g_max must be positive, got {self.g_max}")
        if not self.v_read > 0:
            raise InvalidConfigError(f"v_read must be positive, got {self.v_read}")
        if self.wire_resistance < 0:
            raise InvalidConfigError("wire_resistance must be >= 0")
        if self.i_sat is None:
            object.__setattr__(self, "i_sat", 10.0 * self.g_max * self.v_read)
        if not self.i_sat > 0:
            raise InvalidConfigError(f"i_sat must be positive, got {self.i_sat}")
        if self.y_factor is None:
            object.__setattr__(self, "y_factor", adc_half_levels(self.adc_bits) / self.i_sat)
        if not self.y_factor > 0:
            raise InvalidConfigError("y_factor must be positive")

    @property
    def unit_current(self) -> float:
        """Current of one device at ``g_max`` under a full-scale input (uA)."""
        return self.g_max * self.v_read

    def replace(self, **changes) -> "TileHardwareConfig":
        # values still at their derived default are re-derived
        base = dataclasses.asdict(self)
        if base["i_sat"] == 10.0 * self.g_max * self.v_read:
            base["i_sat"] = None
        if base["y_factor"] == adc_half_levels(self.adc_bits) / self.i_sat:
            base["y_factor"] = None
        base.update(changes)
        return TileHardwareConfig(**base)


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic non-ideality parameters.

    ``sigma_w``, ``sigma_inp`` and ``sigma_out`` are relative to unit weights,
    normalized inputs and the unit output current ``g_max * v_read``.
    Programming noise std is ``c0 + c1*G + c2*G**2`` and read noise std is
    ``a + b*G`` (both in uS).
    """

    sigma_w: float = 0.06
    sigma_inp: float = 0.0
    sigma_out: float = 0.1
    prog_coeffs: tuple = (0.26, 1.965 / 25.0, 0.0)
    read_coeffs: tuple = (0.0, 0.01)
    drift_nu_mean: float = 0.06
    drift_nu_std: float = 0.02
    t0: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "prog_coeffs", tuple(float(c) for c in self.prog_coeffs))
        object.__setattr__(self, "read_coeffs", tuple(float(c) for c in self.read_coeffs))
        if len(self.prog_coeffs) != 3 or len(self.read_coeffs) != 2:
            raise InvalidConfigError("prog_coeffs needs 3 entries and read_coeffs 2")
        for name in ("sigma_w", "sigma_inp", "sigma_out", "drift_nu_std"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be >= 0")
        if not self.t0 > 0:
            raise InvalidConfigError("t0 must be positive")
        if min(self.read_coeffs) < 0:
            raise InvalidConfigError("read-noise coefficients must be >= 0")
        c0, c1, c2 = self.prog_coeffs
        if c0 < 0:
            raise InvalidConfigError("programming-noise std must be >= 0 at G = 0")

    def check_prog_std(self, g_max: float) -> None:
        """Raise if the programming-noise polynomial goes negative on [0, g_max]."""
        grid = np.linspace(0.0, g_max, 257)
        if np.any(prog_noise_std(grid, self.prog_coeffs) < 0):
            raise InvalidConfigError("programming-noise std is negative somewhere in [0, g_max]")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(sigma_w=0.0, sigma_inp=0.0, sigma_out=0.0, prog_coeffs=(0.0, 0.0, 0.0),
                   read_coeffs=(0.0, 0.0), drift_nu_mean=0.0, drift_nu_std=0.0)

    def replace(self, **changes) -> "NoiseModel":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible stream of random numbers.

    The stream is a value: every call to :meth:`generator` starts the same
    sequence again.  Use :meth:`child` to derive independent sub-streams
    (per tile, per batch, per repetition ...).
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < _U64 and 0 <= self.stream_id < _U64):
            raise InvalidConfigError("seed and stream_id must be unsigned 64-bit integers")

    def _sequence(self, *keys):
        return np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *keys))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._sequence()))

    def child(self, *keys: int) -> "RngStream":
        sid = int(self._sequence(*(int(k) for k in keys)).generate_state(1, np.uint64)[0])
        return RngStream(self.seed, sid)


@dataclass
class AnalogTile:
    """One crossbar: differential conductances plus digital periphery.

    ``g_plus``/``g_minus`` hold what is currently in the array (targets before
    programming, programmed values afterwards).  ``drift_stream`` is fixed at
    programming time so that drift exponents stay the same for every read.
    """

    g_plus: np.ndarray
    g_minus: np.ndarray
    input_range: float
    out_scale: np.ndarray
    out_offset: np.ndarray
    g_col_cap: np.ndarray
    config: TileHardwareConfig = field(default_factory=TileHardwareConfig)
    programmed_at: float = 0.0
    drift_stream: Optional[RngStream] = None

    @property
    def shape(self):
        return self.g_plus.shape

    @property
    def is_programmed(self) -> bool:
        return self.drift_stream is not None

    def copy(self) -> "AnalogTile":
        return dataclasses.replace(
            self,
            g_plus=self.g_plus.copy(),
            g_minus=self.g_minus.copy(),
            out_scale=self.out_scale.copy(),
            out_offset=self.out_offset.copy(),
            g_col_cap=self.g_col_cap.copy(),
        )

    def unit_weights(self) -> np.ndarray:
        """Weights seen by the digital periphery, ``(G+ - G-) / g_max``."""
        return (self.g_plus - self.g_minus) / self.config.g_max

    def validate(self, atol: float = 1e-9) -> None:
        rows, cols = self.g_plus.shape
        if self.g_minus.shape != (rows, cols):
            raise ShapeError("g_plus and g_minus differ in shape")
        for name, n in (("out_scale", cols), ("out_offset", cols), ("g_col_cap", cols)):
            if np.shape(getattr(self, name)) != (n,):
                raise ShapeError(f"{name} must have length {cols}")
        if not self.input_range > 0:
            raise InvalidConfigError("input_range must be positive")
        cap = self.g_col_cap
        if np.any(cap <= 0) or np.any(cap > self.config.g_max * (1 + atol)):
            raise MappingDomainError("column caps must lie in (0, g_max]")
        for g in (self.g_plus, self.g_minus):
            if np.any(g < 0) or np.any(g > cap[None, :] * (1 + atol) + atol):
                raise MappingDomainError("conductance outside [0, column cap]")
        if np.any((self.g_plus != 0) & (self.g_minus != 0)):
            raise MappingDomainError("both devices of a differential pair are nonzero")


def adc_half_levels(bits: int) -> int:
    """Number of non-zero levels on each side of a ``2**bits - 1`` level grid."""
    return 2 ** (bits - 1) - 1


def _uniform_quantize(v, bound, bits):
    v = np.clip(np.asarray(v, dtype=float), -bound, bound)
    half = adc_half_levels(bits)
    if half == 0:
        return np.zeros_like(v)
    step = bound / half
    # round half away from zero keeps the quantizer odd-symmetric
    k = np.sign(v) * np.floor(np.abs(v) / step + 0.5)
    return np.clip(k * step, -bound, bound)


def dac_quantize(x, input_range: float, bits: int) -> np.ndarray:
    """Clip to ``[-input_range, input_range]`` and round to ``2**bits - 1`` levels."""
    if not input_range > 0:
        raise InvalidConfigError(f"input_range must be positive, got {input_range}")
    if bits < 1:
        raise InvalidConfigError("bits must be >= 1")
    return _uniform_quantize(x, float(input_range), bits)


def adc_quantize(i, i_sat: float, bits: int) -> np.ndarray:
    """Clip currents to ``[-i_sat, i_sat]`` and round to ``2**bits - 1`` levels.

    The result stays in current units.
    """
    if not i_sat > 0:
        raise InvalidConfigError(f"i_sat must be positive, got {i_sat}")
    if bits < 1:
        raise InvalidConfigError("bits must be >= 1")
    return _uniform_quantize(i, float(i_sat), bits)


def prog_noise_std(g, coeffs) -> np.ndarray:
    c0, c1, c2 = coeffs
    return c0 + c1 * g + c2 * g * g


def program_conductances(targets, noise: NoiseModel, rng: RngStream, g_max: float = 25.0,
                         upper=None) -> np.ndarray:
    """Write target conductances with Gaussian programming noise.

    Cells with a zero target are left in the reset state and stay exactly
    zero.  Results are clipped to ``[0, upper]`` where ``upper`` defaults to
    ``g_max`` and may be a per-column array.
    """
    targets = np.asarray(targets, dtype=float)
    if np.any(targets < 0) or np.any(targets > g_max):
        raise MappingDomainError("target conductances must lie in [0, g_max]")
    std = prog_noise_std(targets, noise.prog_coeffs)
    if not np.any(std):
        return targets.copy()
    eps = rng.generator().standard_normal(targets.shape) * std
    out = np.where(targets > 0, targets + eps, 0.0)
    hi = g_max if upper is None else np.minimum(np.asarray(upper, dtype=float), g_max)
    return np.clip(out, 0.0, hi)


def drift_exponents(shape, noise: NoiseModel, rng: RngStream) -> np.ndarray:
    if noise.drift_nu_std == 0:
        return np.full(shape, noise.drift_nu_mean)
    return noise.drift_nu_mean + noise.drift_nu_std * rng.generator().standard_normal(shape)


def apply_drift(g, t: float, programmed_at: float, noise: NoiseModel, rng: RngStream) -> np.ndarray:
    """Power-law conductance drift ``G * ((t - programmed_at) / t0) ** -nu``.

    The per-cell exponents come from ``rng``; pass the stream fixed at
    programming time to keep them identical across reads.
    """
    g = np.asarray(g, dtype=float)
    elapsed = t - programmed_at
    if elapsed < noise.t0 * (1 - 1e-12):
        raise TemporalOrderError(
            f"read at t={t} is earlier than programming time + t0 ({programmed_at} + {noise.t0})")
    ratio = max(elapsed / noise.t0, 1.0)
    if ratio == 1.0:
        return g.copy()
    nu = drift_exponents(g.shape, noise, rng)
    return np.maximum(g * ratio ** (-nu), 0.0)


def read_noise(g, noise: NoiseModel, rng: RngStream) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    a, b = noise.read_coeffs
    if a == 0 and b == 0:
        return g.copy()
    std = a + b * g
    return np.maximum(g + std * rng.generator().standard_normal(g.shape), 0.0)


def ideal_mvm(x, w) -> np.ndarray:
    """Exact reference product ``x @ w`` (``x`` may be a batch of row vectors)."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"cannot multiply input of shape {x.shape} with matrix {w.shape}")
    return x @ w
