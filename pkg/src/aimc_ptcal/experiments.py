"""Experiment orchestration and artifact writing.

Every artifact starts with a commented header holding the fully resolved
configuration (``# `` followed by YAML), then the data rows.  Data rows
only depend on the configuration, so re-running with the same config and
seed reproduces them byte for byte, whatever ``jobs`` is.

CSV schemas (column order is fixed):

* mvm-error: ``time_seconds,l2_error_percent,seed``
* train-demo: ``epoch,split,loss,accuracy,seed``
* calibrate: ``seed`` followed by :attr:`CalibrationReport.FIELDS`
* ablation: ``quant_io,cond_learned,cond_pt,input_learned,input_pt,time_seconds,mean_accuracy,std_accuracy,n``
* map-report: ``key: value`` summary lines, then
  ``layer,kind,rows,cols,tiles,utilization``
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .calibration import CalibrationConfig, calibrate_network
from .core import NoiseModel, RngStream, TileHardwareConfig
from .crossbar import ForwardMode, program_tile, tile_forward
from .errors import InvalidConfigError, TrainingFailureError
from .mapping import layers_per_tile_count, load_manifest, make_tile, map_network, roberta_base_manifest_path
from .training import HWAModel, TrainConfig, accuracy, finetune, make_toy_dataset, pretrain

EXPERIMENTS = ("mvm-error", "map-report", "calibrate", "train-demo", "ablation")
# 20 s, 1 min, 1 h, 1 day, 30 days, 365 days
DEFAULT_TIMES = (20.0, 60.0, 3600.0, 86400.0, 2592000.0, 31536000.0)
ONE_HOUR = 3600.0

# Desk-scale hardware for the toy MLP: small tiles so every layer spans
# several of them, and an ADC that saturates at 0.75 full-scale unit
# currents so range calibration has something to fix.
DESK_HARDWARE = TileHardwareConfig(rows=32, cols=32, i_sat=3.75)


@dataclass(frozen=True)
class ToyConfig:
    """Desk-scale model, data and evaluation settings."""

    sizes: Tuple[int, ...] = (2, 64, 64, 2)
    n_train: int = 1024
    n_val: int = 256
    data_noise: float = 0.08
    pretrain_epochs: int = 30
    pretrain_lr: float = 1e-2
    calib_batch: int = 64
    eval_reps: int = 3

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise InvalidConfigError("toy.sizes needs at least two positive layer widths")
        if min(self.n_train, self.n_val, self.pretrain_epochs, self.calib_batch, self.eval_reps) < 1:
            raise InvalidConfigError("toy counts must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    repetitions: int = 1
    hardware: TileHardwareConfig = field(default_factory=TileHardwareConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    calibration: Optional[CalibrationConfig] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)
    output_path: Optional[str] = None
    manifest: Optional[str] = None
    times: Tuple[float, ...] = DEFAULT_TIMES
    n_inputs: int = 5120
    weight_std: float = 0.25
    ir_drop: bool = True
    quantization: bool = True
    drift_compensation: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidConfigError(f"unknown experiment {self.experiment!r}; pick one of {', '.join(EXPERIMENTS)}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) \
                or not 0 <= int(self.seed) < 2**64:
            raise InvalidConfigError("seed must be an unsigned 64-bit integer")
        if not isinstance(self.repetitions, (int, np.integer)) or self.repetitions < 1:
            raise InvalidConfigError("repetitions must be an integer >= 1")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        if not self.times or min(self.times) < self.noise.t0:
            raise InvalidConfigError("times must be non-empty and not earlier than t0")
        if self.n_inputs < 1 or self.weight_std <= 0:
            raise InvalidConfigError("n_inputs must be >= 1 and weight_std > 0")
        if self.calibration is None:
            object.__setattr__(self, "calibration", CalibrationConfig.for_hardware(self.hardware))
        if self.output_path is not None:
            parent = Path(self.output_path).expanduser().resolve().parent
            if parent.exists() and not parent.is_dir():
                raise InvalidConfigError(f"output directory {parent} is not a directory")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items() if k != "drift_stream"}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


_SECTIONS = {"hardware": TileHardwareConfig, "noise": NoiseModel, "train": TrainConfig, "toy": ToyConfig}
_TUPLES = {"prog_coeffs", "read_coeffs", "betas", "sizes", "times"}


def _section(cls, values, name):
    if not isinstance(values, dict):
        raise InvalidConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidConfigError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    values = {k: tuple(v) if k in _TUPLES and isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except TypeError as exc:
        raise InvalidConfigError(f"section {name!r}: {exc}") from None


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    """Preset for ``experiment``: full-size 512x512 hardware for the tile and
    mapping experiments, :data:`DESK_HARDWARE` and a wider initial input
    range for the toy-model ones."""
    base = {}
    if experiment in ("calibrate", "train-demo", "ablation"):
        base = dict(hardware=DESK_HARDWARE, train=TrainConfig(init_input_range=3.0))
    if experiment == "ablation":
        base["repetitions"] = 10
    base.update(overrides)
    return ExperimentConfig(experiment, **base)


def config_from_dict(doc: dict, experiment: Optional[str] = None) -> ExperimentConfig:
    """Build a config from a parsed JSON document over the experiment preset.

    Sections (``hardware``, ``noise``, ``calibration``, ``train``, ``toy``)
    override the preset field by field.
    """
    if not isinstance(doc, dict):
        raise InvalidConfigError("config document must be a JSON object")
    doc = dict(doc)
    experiment = experiment or doc.pop("experiment", None)
    doc.pop("experiment", None)
    if experiment is None:
        raise InvalidConfigError("config names no experiment")
    preset = default_config(experiment)
    top = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"experiment"}
    unknown = sorted(set(doc) - top)
    if unknown:
        raise InvalidConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        if name in _SECTIONS and not isinstance(value, dict):
            raise InvalidConfigError(f"section {name!r} must be an object")
        if name == "hardware":
            _section(TileHardwareConfig, value, name)  # key and type check
            kwargs[name] = preset.hardware.replace(**value)
        elif name in _SECTIONS:
            merged = {**dataclasses.asdict(getattr(preset, name)), **value}
            kwargs[name] = _section(_SECTIONS[name], merged, name)
        elif name != "calibration":
            kwargs[name] = tuple(value) if name == "times" else value
    hw = kwargs.get("hardware", preset.hardware)
    calib = doc.get("calibration", {})
    if not isinstance(calib, dict):
        raise InvalidConfigError("section 'calibration' must be an object")
    known = {f.name for f in dataclasses.fields(CalibrationConfig)}
    if set(calib) - known:
        raise InvalidConfigError(f"unknown keys in 'calibration': {', '.join(sorted(set(calib) - known))}")
    kwargs["calibration"] = CalibrationConfig.for_hardware(hw, **calib)
    try:
        return default_config(experiment, **kwargs)
    except TypeError as exc:
        raise InvalidConfigError(str(exc)) from None


def load_config(path, experiment: Optional[str] = None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(doc, experiment)


# -- artifact plumbing ------------------------------------------------------

def header(cfg: ExperimentConfig, extra: Optional[dict] = None) -> str:
    doc = {"aimc_ptcal_artifact": cfg.experiment, "config": cfg.to_dict()}
    if extra:
        doc.update(extra)
    text = yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)
    return "".join(f"# {line}\n" for line in text.splitlines())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def csv_text(fields: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def data_rows(text: str) -> List[str]:
    """The non-comment lines of an artifact."""
    return [ln for ln in text.splitlines() if not ln.startswith("#")]


def write_artifact(text: str, path) -> Path:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def _pmap(fn, tasks, jobs):
    tasks = list(tasks)
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


# -- MVM error versus time ---------------------------------------------------

MVM_FIELDS = ("time_seconds", "l2_error_percent", "seed")


def mvm_errors(cfg: ExperimentConfig, seed: int) -> List[float]:
    """L2 error (percent) of one programmed tile at each of ``cfg.times``."""
    hw = cfg.hardware
    rs = RngStream(seed)
    gen = rs.child(0).generator()
    w = np.clip(gen.normal(0.0, cfg.weight_std, (hw.rows, hw.cols)), -1.0, 1.0)
    x = gen.uniform(-1.0, 1.0, (cfg.n_inputs, hw.rows))
    tile = program_tile(make_tile(w, hw), cfg.noise, rs.child(1))
    ideal = x @ w
    ref = np.linalg.norm(ideal)
    out = []
    for k, t in enumerate(cfg.times):
        mode = ForwardMode.inference(t, cfg.ir_drop, cfg.quantization, cfg.drift_compensation)
        y = tile_forward(tile, x, mode, rs.child(2, k), cfg.noise)
        out.append(100.0 * np.linalg.norm(y - ideal) / ref)
    return out


def _mvm_task(args):
    cfg, seed = args
    return seed, mvm_errors(cfg, seed)


def run_mvm_error_experiment(cfg: ExperimentConfig, jobs: int = 1) -> str:
    seeds = [cfg.seed + r for r in range(cfg.repetitions)]
    results = _pmap(_mvm_task, [(cfg, s) for s in seeds], jobs)
    rows = [(t, e, s) for s, errs in results for t, e in zip(cfg.times, errs)]
    return header(cfg) + csv_text(MVM_FIELDS, rows)


# -- mapping report -----------------------------------------------------------

MAP_FIELDS = ("layer", "kind", "rows", "cols", "tiles", "utilization")


def run_map_report(manifest, cfg: ExperimentConfig) -> str:
    shapes = load_manifest(manifest)
    _, report = map_network(shapes, cfg.hardware)
    counts = layers_per_tile_count(shapes, cfg.hardware)
    cells = cfg.hardware.rows * cfg.hardware.cols
    lines = [
        f"num_tiles: {report.num_tiles}",
        f"mapped_params: {report.mapped_params}",
        f"total_params: {report.total_params}",
        f"avg_utilization_percent: {100 * report.avg_utilization:.2f}",
        f"tile_utilization_percent: {100 * report.tile_utilization:.2f}",
    ]
    rows = [(s.name, s.kind, s.rows, s.cols, counts[s.name], s.rows * s.cols / (counts[s.name] * cells))
            for s in shapes if s.mapped]
    return (header(cfg, {"manifest": str(manifest)}) + "\n".join(lines) + "\n"
            + csv_text(MAP_FIELDS, rows))


# -- toy-model experiments -------------------------------------------------------

def _toy_data(cfg: ExperimentConfig, rs: RngStream):
    t = cfg.toy
    return make_toy_dataset(rs.child(0), t.n_train, t.n_val, t.data_noise)


def _pretrained(cfg: ExperimentConfig, rs: RngStream, data, seed):
    t = cfg.toy
    model = HWAModel.init(list(t.sizes), cfg.hardware, rs.child(1), cfg.train.init_input_range)
    model, _ = pretrain(model, data, rs.child(2), t.pretrain_epochs, t.pretrain_lr, seed)
    return model


def _calib_batches(cfg: ExperimentConfig, data):
    b = cfg.toy.calib_batch
    x = data[0]
    return (x[i:i + b] for i in range(0, x.shape[0] - b + 1, b))


def evaluate(network, data, cfg: ExperimentConfig, rs: RngStream, at_time: float) -> float:
    """Validation accuracy averaged over ``toy.eval_reps`` programmings.

    Programming draws depend only on ``rs`` and the repetition, so every
    configuration sees the same devices.  Drift is always compensated here:
    the digital biases do not follow the analog gain.
    """
    acc = []
    mode = ForwardMode.inference(at_time, cfg.ir_drop, cfg.quantization, drift_compensation=True)
    for r in range(cfg.toy.eval_reps):
        prog = network.program(cfg.noise, rs.child(5, r))
        out = prog.forward(data[2], mode, rs.child(6, r), cfg.noise)
        acc.append(accuracy(out, data[3]))
    return float(np.mean(acc))


TRAIN_FIELDS = ("epoch", "split", "loss", "accuracy", "seed")


def _train_task(args):
    cfg, seed = args
    rs = RngStream(seed)
    data = _toy_data(cfg, rs)
    model = _pretrained(cfg, rs, data, seed)
    _, metrics = finetune(model, data, cfg.train, rs.child(3), seed)
    return metrics


def run_train_demo(cfg: ExperimentConfig, jobs: int = 1) -> str:
    seeds = [cfg.seed + r for r in range(cfg.repetitions)]
    results = _pmap(_train_task, [(cfg, s) for s in seeds], jobs)
    return header(cfg) + csv_text(TRAIN_FIELDS, [row for rows in results for row in rows])


def _calibrate_task(args):
    cfg, seed = args
    rs = RngStream(seed)
    data = _toy_data(cfg, rs)
    model = _pretrained(cfg, rs, data, seed)
    model, _ = finetune(model, data, cfg.train, rs.child(3), seed)
    _, report = calibrate_network(model.to_network(), _calib_batches(cfg, data), cfg.calibration,
                                  rng=rs.child(4))
    return [(seed, *row) for row in report.rows()]


def run_calibration_experiment(cfg: ExperimentConfig, jobs: int = 1) -> str:
    from .calibration import CalibrationReport

    seeds = [cfg.seed + r for r in range(cfg.repetitions)]
    results = _pmap(_calibrate_task, [(cfg, s) for s in seeds], jobs)
    return header(cfg) + csv_text(("seed",) + CalibrationReport.FIELDS, [r for rows in results for r in rows])


@dataclass(frozen=True)
class AblationCell:
    """One configuration row: what was learned in training, what was set
    post-training, and whether training modelled I/O quantization."""

    quant_io: bool
    cond_learned: bool
    cond_pt: bool
    input_learned: bool
    input_pt: bool

    @property
    def training_key(self):
        return (self.quant_io, self.cond_learned, self.input_learned)


def _cell(q, cl, cp, il, ip):
    return AblationCell(bool(q), bool(cl), bool(cp), bool(il), bool(ip))


ABLATION_CELLS = (
    _cell(0, 0, 0, 0, 0),
    _cell(1, 0, 0, 0, 0),
    _cell(1, 0, 0, 0, 1),
    _cell(1, 0, 0, 1, 0),
    _cell(1, 0, 0, 1, 1),
    _cell(1, 0, 1, 0, 0),
    _cell(1, 0, 1, 0, 1),
    _cell(1, 1, 0, 0, 0),
    _cell(1, 1, 0, 1, 0),
    _cell(1, 1, 1, 0, 0),
    _cell(1, 1, 1, 0, 1),
    _cell(1, 1, 1, 1, 0),
    _cell(1, 1, 1, 1, 1),
)
ABLATION_FIELDS = ("quant_io", "cond_learned", "cond_pt", "input_learned", "input_pt", "time_seconds",
                   "mean_accuracy", "std_accuracy", "n")


def _ablation_task(args):
    cfg, seed, cells, times = args
    rs = RngStream(seed)
    data = _toy_data(cfg, rs)
    base = _pretrained(cfg, rs, data, seed)
    trained = {}
    out = np.zeros((len(cells), len(times)))
    for ci, cell in enumerate(cells):
        key = cell.training_key
        if key not in trained:
            tc = cfg.train.replace(quantization=cell.quant_io, learn_conductance_scale=cell.cond_learned,
                                   learn_input_range=cell.input_learned)
            try:
                model, _ = finetune(base, data, tc, rs.child(3), seed)
            except TrainingFailureError as exc:
                raise TrainingFailureError(f"{exc} (seed {seed}, {cell})") from exc
            trained[key] = model.to_network()
        net = trained[key]
        if cell.cond_pt or cell.input_pt:
            net, _ = calibrate_network(net, _calib_batches(cfg, data), cfg.calibration,
                                       input_range=cell.input_pt, conductance_range=cell.cond_pt,
                                       rng=rs.child(4))
        for ti, t in enumerate(times):
            out[ci, ti] = evaluate(net, data, cfg, rs, t)
    return out


def ablation_accuracies(cfg: ExperimentConfig, cells=ABLATION_CELLS, times=(None, ONE_HOUR), jobs: int = 1):
    """Accuracy array of shape ``(repetitions, len(cells), len(times))``.

    ``None`` in ``times`` stands for ``t0``.
    """
    times = tuple(cfg.noise.t0 if t is None else float(t) for t in times)
    seeds = [cfg.seed + r for r in range(cfg.repetitions)]
    results = _pmap(_ablation_task, [(cfg, s, tuple(cells), times) for s in seeds], jobs)
    return np.stack(results), times


def run_calibration_ablation(cfg: ExperimentConfig, jobs: int = 1, cells=ABLATION_CELLS) -> str:
    acc, times = ablation_accuracies(cfg, cells, jobs=jobs)
    n = acc.shape[0]
    rows = []
    for ci, cell in enumerate(cells):
        for ti, t in enumerate(times):
            a = acc[:, ci, ti]
            std = float(a.std(ddof=1)) if n > 1 else 0.0
            rows.append((cell.quant_io, cell.cond_learned, cell.cond_pt, cell.input_learned, cell.input_pt,
                         t, float(a.mean()), std, n))
    return header(cfg) + csv_text(ABLATION_FIELDS, rows)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> str:
    if cfg.experiment == "mvm-error":
        return run_mvm_error_experiment(cfg, jobs)
    if cfg.experiment == "map-report":
        return run_map_report(cfg.manifest or roberta_base_manifest_path(), cfg)
    if cfg.experiment == "calibrate":
        return run_calibration_experiment(cfg, jobs)
    if cfg.experiment == "train-demo":
        return run_train_demo(cfg, jobs)
    return run_calibration_ablation(cfg, jobs)


def linear_log_fit(times, errors):
    """``(slope, intercept, r_squared)`` of ``errors`` against ``log(times)``."""
    lt = np.log(np.asarray(times, dtype=float))
    e = np.asarray(errors, dtype=float)
    slope, intercept = np.polyfit(lt, e, 1)
    resid = e - (slope * lt + intercept)
    ss_tot = float(((e - e.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2
