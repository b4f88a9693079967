import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aimc_ptcal.calibration import (
    CalibrationConfig,
    CalibrationReport,
    calibrate_network,
    collect_input_samples,
    column_peak_currents,
    optimize_conductance_ranges,
    optimize_input_range,
)
from aimc_ptcal.core import NoiseModel, RngStream, TileHardwareConfig
from aimc_ptcal.crossbar import ForwardMode, program_tile, tile_forward
from aimc_ptcal.errors import CalibrationDataError, DegenerateRangeError, InvalidConfigError
from aimc_ptcal.mapping import make_tile
from aimc_ptcal.network import build_network


def nearest_rank(values, k):
    s = np.sort(np.abs(np.asarray(values, float)).ravel())
    rank = max(1, math.ceil(k / 100 * s.size))
    return s[rank - 1]


def rand_tile(rows=32, cols=8, seed=0, hw=None, xr=1.0):
    hw = hw or TileHardwareConfig(rows=rows, cols=cols, i_sat=5.0)
    w = np.clip(np.random.default_rng(seed).normal(0, 0.6, (rows, cols)), -1, 1)
    return make_tile(w, hw, xr), w


# -- config ---------------------------------------------------------------------

def test_config_defaults_and_validation():
    cfg = CalibrationConfig()
    assert (cfg.n_samples, cfg.percentile_k, cfg.n_std, cfg.g_min_floor) == (2, 99.995, 2.0, 6.25)
    hw = TileHardwareConfig(i_sat=5.0)
    assert CalibrationConfig.for_hardware(hw).y_factor == pytest.approx(127 / 5.0)
    for bad in (dict(g_min_floor=30.0), dict(percentile_k=0.0), dict(n_std=-1), dict(n_samples=0),
                dict(peak_estimator="magic"), dict(i_sat=0.0)):
        with pytest.raises(InvalidConfigError):
            CalibrationConfig(**bad)


# -- sample collection -------------------------------------------------------------

def test_collect_single_tile_identity():
    net = build_network([np.eye(4)], [np.zeros(4)], TileHardwareConfig(rows=4, cols=4))
    batches = [np.arange(8.0).reshape(2, 4), -np.ones((3, 4))]
    s = collect_input_samples(net, iter(batches), 2)
    assert np.array_equal(s[(0, 0)], np.concatenate(batches))


def test_collect_two_tile_split():
    hw = TileHardwareConfig(rows=3, cols=8)
    net = build_network([np.full((5, 2), 0.1)], [np.zeros(2)], hw)
    x = np.arange(10.0).reshape(2, 5)
    s = collect_input_samples(net, [x], 1)
    assert np.array_equal(s[(0, 0)], x[:, :3]) and np.array_equal(s[(0, 1)], x[:, 3:])


def test_collect_second_layer_matches_reference():
    rng = np.random.default_rng(0)
    w1, w2 = rng.uniform(-1, 1, (3, 6)), rng.uniform(-1, 1, (6, 2))
    b1 = rng.normal(size=6)
    net = build_network([w1, w2], [b1, np.zeros(2)], TileHardwareConfig(rows=8, cols=8))
    x = rng.normal(size=(10, 3))
    s = collect_input_samples(net, [x], 1)
    assert np.allclose(s[(1, 0)], np.maximum(x @ w1 + b1, 0), rtol=1e-12, atol=1e-14)


def test_collect_errors():
    net = build_network([np.eye(2)], [np.zeros(2)], TileHardwareConfig(rows=2, cols=2))
    with pytest.raises(CalibrationDataError):
        collect_input_samples(net, iter([]), 1)
    with pytest.raises(CalibrationDataError):
        collect_input_samples(net, [np.ones((1, 2))], 2)
    with pytest.raises(InvalidConfigError):
        collect_input_samples(net, [np.ones((1, 2))], 0)


# -- input range ------------------------------------------------------------------------

def test_input_range_examples():
    assert optimize_input_range([2.5, -2.5, 2.5, -2.5], 37.0) == 2.5
    x = np.random.default_rng(1).normal(size=500)
    assert optimize_input_range(x, 100) == np.abs(x).max()
    assert optimize_input_range(np.arange(1, 1001), 99) == nearest_rank(np.arange(1, 1001), 99) == 990


def test_input_range_errors():
    with pytest.raises(DegenerateRangeError):
        optimize_input_range(np.zeros(10), 99.0)
    with pytest.raises(CalibrationDataError):
        optimize_input_range([], 99.0)
    with pytest.raises(InvalidConfigError):
        optimize_input_range([1.0], 0.0)


@given(hnp.arrays(float, st.integers(1, 300), elements=st.floats(-1e4, 1e4)).filter(lambda a: np.any(a != 0)),
       st.floats(0.001, 100))
def test_input_range_nearest_rank_property(x, k):
    ref = nearest_rank(x, k)
    if ref == 0:
        with pytest.raises(DegenerateRangeError):
            optimize_input_range(x, k)
    else:
        assert optimize_input_range(x, k) == ref


def test_input_range_never_touches_conductances():
    tile, _ = rand_tile()
    before = tile.g_plus.copy()
    net = build_network([tile.unit_weights()], [np.zeros(8)], tile.config)
    out, _ = calibrate_network(net, [np.ones((4, 32))] * 2, CalibrationConfig.for_hardware(tile.config),
                               input_range=True, conductance_range=False)
    assert np.array_equal(out.tile((0, 0)).g_plus, net.tile((0, 0)).g_plus)
    assert np.array_equal(tile.g_plus, before)


# -- conductance range -------------------------------------------------------------------

def test_zero_column_keeps_full_range():
    hw = TileHardwareConfig(rows=4, cols=2, i_sat=1.0)
    tile = make_tile(np.array([[1.0, 0.0]] * 4), hw)
    cfg = CalibrationConfig.for_hardware(hw)
    new, rep = optimize_conductance_ranges(tile, np.ones((5, 4)), cfg)
    assert rep.ip_before[1] == 0.0 and new.g_col_cap[1] == 25.0
    assert np.array_equal(new.g_plus[:, 1], tile.g_plus[:, 1])


def test_single_cell_hand_computation():
    hw = TileHardwareConfig(rows=1, cols=1, i_sat=2.5)  # unit current is 5 uA = 2 * I_S
    tile = make_tile(np.array([[1.0]]), hw)
    cfg = CalibrationConfig.for_hardware(hw, n_std=0.0)
    new, rep = optimize_conductance_ranges(tile, np.ones((6, 1)), cfg)
    limit = cfg.i_sat * cfg.y_factor
    assert rep.ip_before[0] == pytest.approx(cfg.v_read * 25.0 * cfg.y_factor)
    assert rep.ip_before[0] == pytest.approx(2 * limit)
    assert new.g_col_cap[0] == pytest.approx(12.5)
    assert rep.ip_after[0] <= limit
    assert new.out_scale[0] == pytest.approx(2.0)


def test_cap_monotone_in_n_std():
    tile, _ = rand_tile(seed=3)
    x = np.random.default_rng(4).normal(size=(64, 32))
    caps = []
    for L in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0):
        new, _ = optimize_conductance_ranges(tile, x, CalibrationConfig.for_hardware(tile.config, n_std=L))
        caps.append(new.g_col_cap)
    for a, b in zip(caps, caps[1:]):
        assert np.all(b <= a * (1 + 1e-12))
    assert np.all(caps[-1] >= tile.config.g_max / 4 * (1 - 1e-12))


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.5, 20), st.floats(0.0, 4.0))
def test_saturation_postcondition(seed, i_sat, L):
    hw = TileHardwareConfig(rows=24, cols=6, i_sat=i_sat)
    tile, _ = rand_tile(24, 6, seed % 1000, hw)
    x = np.random.default_rng(seed).standard_t(3, (40, 24))
    cfg = CalibrationConfig.for_hardware(hw, n_std=L)
    new, rep = optimize_conductance_ranges(tile, x, cfg)
    limit = cfg.i_sat * cfg.y_factor
    ip = column_peak_currents(new, x, cfg)
    assert np.array_equal(ip, rep.ip_after)
    assert np.all((ip <= limit) | rep.floored)
    assert np.all(new.g_col_cap >= cfg.g_min_floor * (1 - 1e-12))
    new.validate()


@given(st.integers(0, 2 ** 32 - 1))
def test_digital_equivalence_and_idempotence(seed):
    tile, _ = rand_tile(seed=seed % 997)
    x = np.random.default_rng(seed).laplace(size=(30, 32))
    cfg = CalibrationConfig.for_hardware(tile.config)
    once, r1 = optimize_conductance_ranges(tile, x, cfg)
    twice, r2 = optimize_conductance_ranges(once, x, cfg)
    y0 = tile_forward(tile, x, ForwardMode.ideal())
    y1 = tile_forward(once, x, ForwardMode.ideal())
    assert np.allclose(y1, y0, rtol=1e-10, atol=1e-10 * np.abs(y0).max())
    assert np.allclose(twice.g_col_cap, once.g_col_cap, rtol=1e-12, atol=0)


def test_all_zero_samples_skip_columns():
    tile, _ = rand_tile()
    new, rep = optimize_conductance_ranges(tile, np.zeros((4, 32)), CalibrationConfig.for_hardware(tile.config))
    assert rep.skipped.all() and np.all(new.g_col_cap == 25.0)


def test_sampled_estimator_needs_stream_and_is_seeded():
    tile, _ = rand_tile()
    x = np.random.default_rng(0).normal(size=(20, 32))
    cfg = CalibrationConfig.for_hardware(tile.config, peak_estimator="sampled")
    with pytest.raises(InvalidConfigError):
        optimize_conductance_ranges(tile, x, cfg)
    a, _ = optimize_conductance_ranges(tile, x, cfg, RngStream(3))
    b, _ = optimize_conductance_ranges(tile, x, cfg, RngStream(3))
    assert np.array_equal(a.g_col_cap, b.g_col_cap)


def test_each_method_reduces_error_on_saturating_tile():
    hw = TileHardwareConfig(rows=64, cols=16, i_sat=5.0)
    rng = np.random.default_rng(0)
    w = np.clip(np.abs(rng.normal(0.8, 0.2, (64, 16))), 0, 1) * np.where(rng.random((64, 16)) < 0.8, 1, -1)
    x = rng.laplace(0, 1, (512, 64))
    samples, test = x[:256], x[256:]
    tile = make_tile(w, hw, input_range=1.0)
    cfg = CalibrationConfig.for_hardware(hw)

    def err(t):
        p = program_tile(t, NoiseModel(), RngStream(0))
        y = tile_forward(p, test, ForwardMode.inference(20.0, ir_drop=False), RngStream(1), NoiseModel())
        return np.linalg.norm(y - test @ w) / np.linalg.norm(test @ w)

    inp = tile.copy()
    inp.input_range = optimize_input_range(samples, cfg.percentile_k)
    cond, _ = optimize_conductance_ranges(tile, samples, cfg)
    both, _ = optimize_conductance_ranges(inp, samples, cfg)
    e = [err(t) for t in (tile, inp, cond, both)]
    assert e[1] < e[0] and e[2] < e[0] and e[3] < e[0]
    assert e[3] <= min(e[1], e[2])


# -- whole-network calibration and its report ----------------------------------------------

def test_calibrate_network_report_round_trip():
    hw = TileHardwareConfig(rows=8, cols=8, i_sat=2.0)
    rng = np.random.default_rng(2)
    ws = [rng.uniform(-1, 1, (6, 10)), rng.uniform(-1, 1, (10, 3))]
    net = build_network(ws, [np.zeros(10), np.zeros(3)], hw)
    data = [rng.normal(size=(16, 6)) for _ in range(3)]
    cfg = CalibrationConfig.for_hardware(hw)
    out, rep = calibrate_network(net, iter(data), cfg)
    assert set(rep.input_ranges) == set(net.tile_keys()) == set(rep.columns)
    x = rng.normal(size=(5, 6))
    assert np.allclose(out.forward(x), net.forward(x), rtol=1e-10, atol=1e-10)
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert tuple(rows[0]) == CalibrationReport.FIELDS
    assert len(rows) - 1 == sum(len(c.g_col_cap) for c in rep.columns.values())
    for r in rows[1:]:
        key = (int(r[0]), int(r[1]))
        assert float(r[3]) == rep.input_ranges[key]
        assert float(r[4]) == rep.columns[key].g_col_cap[int(r[2])]
        sat, floored = int(r[7]), int(r[8])
        assert float(r[6]) <= cfg.i_sat * cfg.y_factor or floored
        assert sat in (0, 1)
