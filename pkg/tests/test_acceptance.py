"""Acceptance criteria, one test each.  Every test prints a single
``criterion N: PASS|FAIL ...`` line (capture disabled, so it shows up in
plain ``pytest`` output) before asserting."""

import math
import os
import time

import numpy as np
import pytest

from aimc_ptcal.calibration import (
    CalibrationConfig,
    column_peak_currents,
    optimize_conductance_ranges,
    optimize_input_range,
)
from aimc_ptcal.core import TileHardwareConfig
from aimc_ptcal.crossbar import ForwardMode, tile_forward
from aimc_ptcal.experiments import (
    AblationCell,
    ToyConfig,
    ablation_accuracies,
    data_rows,
    default_config,
    linear_log_fit,
    mvm_errors,
    run_experiment,
)
from aimc_ptcal.irdrop import dense_nodal_currents, ir_drop_currents
from aimc_ptcal.mapping import make_tile
from aimc_ptcal.training import HWAModel, TrainConfig, input_range_gradient, softmax_xent

JOBS = min(os.cpu_count() or 1, 10)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, started):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - started:.1f} s) {detail}")
        assert ok, detail
    return emit


def test_criterion_1_tile_map(report):
    t = time.perf_counter()
    lines = data_rows(run_experiment(default_config("map-report")))
    stats = dict(ln.split(": ") for ln in lines[:4])
    util = float(stats["avg_utilization_percent"])
    ok = (stats["num_tiles"] == "486" and stats["mapped_params"] == "85609730"
          and abs(util - 61.57) <= 0.01 and time.perf_counter() - t < 1.0)
    report(1, ok, f"tiles={stats['num_tiles']} mapped={stats['mapped_params']} util={util:.2f}%", t)


def test_criterion_2_error_at_t0(report):
    t = time.perf_counter()
    cfg = default_config("mvm-error", times=(20.0,))
    err = mvm_errors(cfg, cfg.seed)[0]
    elapsed = time.perf_counter() - t
    report(2, 10.0 <= err <= 18.0 and elapsed < 30, f"L2 error at t0 = {err:.2f}% (band 10-18)", t)


def test_criterion_3_temporal_shape(report):
    t = time.perf_counter()
    cfg = default_config("mvm-error")
    errs = mvm_errors(cfg, cfg.seed)
    slope, _, r2 = linear_log_fit(np.array(cfg.times), errs)
    monotone = bool(np.all(np.diff(errs) >= 0))
    elapsed = time.perf_counter() - t
    detail = f"errors={np.round(errs, 2).tolist()} monotone={monotone} R2={r2:.4f} slope={slope:.3f}"
    report(3, monotone and r2 >= 0.9 and elapsed < 120, detail, t)


def test_criterion_4_ir_drop_oracle(report):
    t = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(200):
        rows, cols = rng.integers(1, 9, 2)
        g = rng.uniform(0, 25, (rows, cols)) * (rng.random((rows, cols)) > 0.1)
        v = rng.uniform(-0.2, 0.2, rows)
        R = float(rng.choice([0.35, 5.0, 100.0]))
        ref = dense_nodal_currents(g, v, R)
        scale = max(np.abs(ref).max(), 1e-300)
        worst = max(worst, np.abs(ir_drop_currents(g, v, R) - ref).max() / scale)
        if not np.array_equal(ir_drop_currents(g, v, 0.0), v @ g):
            worst = math.inf
    ok = worst <= 1e-9 and time.perf_counter() - t < 30
    report(4, ok, f"max relative deviation {worst:.2e} over 200 tiles; R=0 exact", t)


def _direct_term_sum(x, g, xr, eta):
    total = 0.0
    for xi, gi in zip(x, g):
        if xi >= xr:
            total += min(gi, 0.0)
        if xi <= -xr:
            total -= max(gi, 0.0)
    return total + xr * eta * sum(1 for xi in x if abs(xi) < xr) / len(x)


def _quiet_loss(model, x, y, cfg):
    return softmax_xent(model.forward(x, cfg, noisy=False)[0], y)[0]


def test_criterion_5_range_and_scale_gradients(report):
    t = time.perf_counter()
    rng = np.random.default_rng(5)
    exact = 0
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        x, g = rng.normal(0, 2, n), rng.normal(size=n)
        xr, eta = float(rng.uniform(0.05, 4)), float(rng.uniform(0, 1))
        exact += math.isclose(input_range_gradient(x, g, xr, eta), _direct_term_sum(x, g, xr, eta),
                              rel_tol=1e-12, abs_tol=1e-12)
    quiet = TrainConfig(sigma_w=0.0, sigma_out=0.0, quantization=False)
    worst, h = 0.0, 1e-6
    for seed in range(5):
        r = np.random.default_rng(seed)
        model = HWAModel([r.uniform(-1, 1, (4, 4))], [r.normal(size=4)], TileHardwareConfig(rows=4, cols=4), 1.5)
        model.etas[0][0] = r.uniform(0.2, 1.0, 4)
        x, y = r.normal(size=(6, 4)), r.integers(0, 4, 6)
        logits, caches = model.forward(x, quiet, noisy=False)
        g_eta = model.backward(softmax_xent(logits, y)[1], caches, quiet)[3][0][0]
        for c in range(4):
            plus, minus = model.copy(), model.copy()
            plus.etas[0][0][c] += h
            minus.etas[0][0][c] -= h
            fd = (_quiet_loss(plus, x, y, quiet) - _quiet_loss(minus, x, y, quiet)) / (2 * h)
            worst = max(worst, abs(g_eta[c] - fd) / max(abs(fd), 1e-10))
    ok = exact == 1000 and worst <= 1e-5 and time.perf_counter() - t < 10
    report(5, ok, f"closed form {exact}/1000 exact; channel-scale FD max rel {worst:.1e}", t)


def test_criterion_6_calibration_postconditions(report):
    t = time.perf_counter()
    rng = np.random.default_rng(6)
    sat_ok = equiv_ok = idem_ok = True
    for trial in range(40):
        hw = TileHardwareConfig(rows=32, cols=8, i_sat=float(rng.uniform(0.5, 20)))
        w = np.clip(rng.normal(0, 0.6, (32, 8)), -1, 1)
        tile = make_tile(w, hw, 1.0)
        x = rng.standard_t(3, (48, 32))
        cfg = CalibrationConfig.for_hardware(hw, n_std=float(rng.uniform(0, 4)))
        once, rep = optimize_conductance_ranges(tile, x, cfg)
        ip = column_peak_currents(once, x, cfg)
        sat_ok &= bool(np.all((ip <= cfg.i_sat * cfg.y_factor) | rep.floored))
        y0, y1 = (tile_forward(tt, x, ForwardMode.ideal()) for tt in (tile, once))
        equiv_ok &= bool(np.allclose(y1, y0, rtol=1e-10, atol=1e-10 * np.abs(y0).max()))
        twice, _ = optimize_conductance_ranges(once, x, cfg)
        idem_ok &= bool(np.allclose(twice.g_col_cap, once.g_col_cap, rtol=1e-10, atol=0))
    rank_ok = 0
    for _ in range(1000):
        s = rng.normal(0, rng.uniform(0.1, 10), int(rng.integers(1, 500)))
        k = float(rng.uniform(0.01, 100))
        sorted_abs = np.sort(np.abs(s))
        rank_ok += optimize_input_range(s, k) == sorted_abs[max(1, math.ceil(k / 100 * s.size)) - 1]
    ok = sat_ok and equiv_ok and idem_ok and rank_ok == 1000 and time.perf_counter() - t < 30
    report(6, ok, f"I_P<=I_S {sat_ok}; nearest-rank {rank_ok}/1000; ideal-equivalent {equiv_ok}; "
                  f"idempotent {idem_ok}", t)


# none, input PT, conductance PT, both PT, learned only, learned + both PT
C7_CELLS = (AblationCell(True, False, False, False, False), AblationCell(True, False, False, False, True),
            AblationCell(True, False, True, False, False), AblationCell(True, False, True, False, True),
            AblationCell(True, True, False, True, False), AblationCell(True, True, True, True, True))


def test_criterion_7_directional_ablation(report):
    t = time.perf_counter()
    cfg = default_config("ablation")
    acc, _ = ablation_accuracies(cfg, C7_CELLS, times=(None,), jobs=JOBS)
    acc = acc[:, :, 0]
    mean = acc.mean(axis=0)
    se = acc.std(axis=0, ddof=1) / math.sqrt(acc.shape[0])
    none, inp, cond, both, learned, learned_pt = mean
    gap, pooled = both - none, math.hypot(se[0], se[3])
    ok = (both >= max(inp, cond) and min(inp, cond) >= none and learned_pt >= learned
          and gap > 2 * pooled and time.perf_counter() - t < 600)
    detail = (f"none={none:.4f} input={inp:.4f} cond={cond:.4f} both={both:.4f} "
              f"learned={learned:.4f} learned+PT={learned_pt:.4f}; gap {gap:.4f} vs 2*SE {2 * pooled:.4f}")
    report(7, ok, detail, t)


def test_criterion_8_determinism(report):
    t = time.perf_counter()
    toy = ToyConfig(sizes=(2, 16, 2), n_train=128, n_val=64, pretrain_epochs=3, calib_batch=32, eval_reps=1)
    small_train = TrainConfig(epochs=2, init_input_range=3.0)
    configs = {
        "map-report": default_config("map-report"),
        "mvm-error": default_config("mvm-error", n_inputs=256, times=(20.0, 3600.0, 31536000.0), seed=8),
        "calibrate": default_config("calibrate", toy=toy, train=small_train, seed=8),
        "train-demo": default_config("train-demo", toy=toy, train=small_train, seed=8, repetitions=2),
        "ablation": default_config("ablation", toy=toy, train=small_train, seed=8, repetitions=2),
    }
    same = {name: data_rows(run_experiment(c)) == data_rows(run_experiment(c, jobs=2))
            for name, c in configs.items()}
    report(8, all(same.values()), " ".join(f"{k}={'identical' if v else 'DIFFERS'}" for k, v in same.items()), t)
