"""Hardware-aware training of a small MLP whose layers are split over tiles.

The forward pass of every tile follows the analog model used at inference
in its training form: unit weights with additive Gaussian noise, DAC
clipping/quantization of the inputs, output noise and ADC clipping.  Inputs
use a straight-through estimator inside the input range and zero gradient
outside it; the input range itself receives the clip-based range gradient
with a decay term.  Optionally each bitline carries a learnable scale
``eta`` in (0, 1] that multiplies its analog output.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import RngStream, TileHardwareConfig, adc_quantize, dac_quantize
from .errors import InvalidConfigError, TrainingFailureError
from .mapping import LayerShape, map_network
from .network import build_network

ETA_MIN = 1e-3
XR_MIN = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    sigma_w: float = 0.06
    sigma_out: float = 0.1
    lr_init: float = 5e-5
    lr_final: float = 5e-8
    epochs: int = 20
    batch_size: int = 8
    decay_eta: float = 1e-2
    learn_input_range: bool = False
    learn_conductance_scale: bool = False
    quantization: bool = True
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    # learning rate of input ranges and channel scales (defaults to lr_init)
    range_lr: Optional[float] = None
    init_input_range: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.lr_final > self.lr_init:
            raise InvalidConfigError("lr_final must not exceed lr_init")
        if self.decay_eta < 0 or self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfigError("decay_eta >= 0, epochs >= 1 and batch_size >= 1 required")
        if self.sigma_w < 0 or self.sigma_out < 0:
            raise InvalidConfigError("noise std must be >= 0")
        if not self.init_input_range > 0:
            raise InvalidConfigError("init_input_range must be positive")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def input_range_gradient(x_cached, grad_x, x_r: float, eta: float) -> float:
    """Gradient for a tile's input range.

    Clipped-high elements pass their negative gradients, clipped-low ones
    their positive gradients (negated), and a decay term proportional to
    the fraction of unclipped elements pulls the range in.
    """
    x = np.asarray(x_cached, dtype=float).ravel()
    g = np.asarray(grad_x, dtype=float).ravel()
    upper = np.minimum(g[x >= x_r], 0.0).sum()
    lower = np.maximum(g[x <= -x_r], 0.0).sum()
    inside = np.count_nonzero(np.abs(x) < x_r)
    return float(upper - lower + x_r * eta * inside / x.size)


def conductance_scale_gradient(grad_scaled, pre_scale) -> np.ndarray:
    """Per-bitline gradient of a scale ``eta`` applied as ``s = eta * p``:
    ``sum over the batch of dL/ds * p``."""
    return (np.asarray(grad_scaled) * np.asarray(pre_scale)).sum(axis=0)


class AdamW:
    """Adaptive moments with decoupled weight decay, in place on arrays."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lrs, decays):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v, lr, wd in zip(self.params, grads, self.m, self.v, lrs, decays):
            if wd:
                p *= 1 - lr * wd
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _tile_forward(x, w, x_r, eta, hw, cfg: TrainConfig, gen, noisy=True):
    """One tile in training form; returns output and a backward cache."""
    xq = dac_quantize(x, x_r, hw.dac_bits) if cfg.quantization else x
    xn = xq / x_r
    wn = w + cfg.sigma_w * gen.standard_normal(w.shape) if noisy and cfg.sigma_w > 0 else w
    p = xn @ wn
    s = p * eta
    if noisy and cfg.sigma_out > 0:
        s = s + cfg.sigma_out * gen.standard_normal(s.shape)
    if cfg.quantization:
        bound = hw.i_sat / hw.unit_current
        a = adc_quantize(s * hw.unit_current, hw.i_sat, hw.adc_bits) / hw.unit_current
        live = np.abs(s) < bound
    else:
        a = s
        live = None
    return a * x_r, (x, xn, wn, p, live, x_r, eta)


def _tile_backward(grad_out, cache, cfg: TrainConfig):
    x, xn, wn, p, live, x_r, eta = cache
    g_s = grad_out * x_r
    if live is not None:
        g_s = g_s * live
    g_eta = conductance_scale_gradient(g_s, p)
    g_p = g_s * eta
    g_w = xn.T @ g_p
    g_xq = (g_p @ wn.T) / x_r
    if cfg.quantization:
        g_x = g_xq * (np.abs(x) < x_r)
    else:
        g_x = g_xq
    return g_x, g_w, g_eta, g_xq


def noisy_forward(weights_unit, x, cfg: TrainConfig, rng: RngStream, input_range: float = 1.0,
                  hw: Optional[TileHardwareConfig] = None):
    """``(W + sigma_w xi)^T f_dac(x) + sigma_out xi`` for a single tile."""
    hw = TileHardwareConfig() if hw is None else hw
    w = np.asarray(weights_unit, dtype=float)
    y, _ = _tile_forward(np.asarray(x, dtype=float), w, input_range, np.ones(w.shape[1]), hw, cfg,
                         rng.generator())
    return y


class HWAModel:
    """Dense ReLU network whose layers are split across tiles.

    Per tile the model keeps an input range and a vector of bitline scales.
    """

    def __init__(self, weights, biases, hw: TileHardwareConfig, init_input_range: float = 1.0):
        self.hw = hw
        self.weights = [np.asarray(w, dtype=float).copy() for w in weights]
        self.biases = [np.asarray(b, dtype=float).copy() for b in biases]
        shapes = [LayerShape(f"layer{i}", "linear", *w.shape, True) for i, w in enumerate(self.weights)]
        assignments, self.report = map_network(shapes, hw)
        self.assignments = [[a for a in assignments if a.layer == s.name] for s in shapes]
        self.input_ranges = [np.full(len(a), float(init_input_range)) for a in self.assignments]
        self.etas = [[np.ones(a.col_span[1]) for a in tiles] for tiles in self.assignments]

    @classmethod
    def init(cls, sizes, hw: TileHardwareConfig, rng: RngStream, init_input_range: float = 1.0):
        gen = rng.generator()
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(np.clip(gen.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)), -1, 1))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, hw, init_input_range)

    def copy(self) -> "HWAModel":
        out = HWAModel(self.weights, self.biases, self.hw)
        out.input_ranges = [x.copy() for x in self.input_ranges]
        out.etas = [[e.copy() for e in tiles] for tiles in self.etas]
        return out

    def forward(self, x, cfg: TrainConfig, gen=None, noisy=True):
        h = np.asarray(x, dtype=float)
        caches = []
        n = len(self.weights)
        for li in range(n):
            out = np.tile(self.biases[li], (h.shape[0], 1))
            tile_caches = []
            for ti, a in enumerate(self.assignments[li]):
                y, c = _tile_forward(h[:, a.rows], self.weights[li][a.rows, a.cols],
                                     self.input_ranges[li][ti], self.etas[li][ti], self.hw, cfg, gen, noisy)
                out[:, a.cols] += y
                tile_caches.append(c)
            pre = out
            h = np.maximum(pre, 0.0) if li < n - 1 else pre
            caches.append((pre, tile_caches))
        return h, caches

    def backward(self, grad, caches, cfg: TrainConfig):
        n = len(self.weights)
        g_w = [np.zeros_like(w) for w in self.weights]
        g_b = [None] * n
        g_xr = [np.zeros_like(x) for x in self.input_ranges]
        g_eta = [[np.zeros_like(e) for e in tiles] for tiles in self.etas]
        for li in range(n - 1, -1, -1):
            pre, tile_caches = caches[li]
            if li < n - 1:
                grad = grad * (pre > 0)
            g_b[li] = grad.sum(axis=0)
            g_in = np.zeros((grad.shape[0], self.weights[li].shape[0]))
            for ti, (a, c) in enumerate(zip(self.assignments[li], tile_caches)):
                gx, gw, ge, gxq = _tile_backward(grad[:, a.cols], c, cfg)
                g_w[li][a.rows, a.cols] = gw
                g_eta[li][ti] = ge
                g_xr[li][ti] = input_range_gradient(c[0], gxq, self.input_ranges[li][ti], cfg.decay_eta)
                g_in[:, a.rows] += gx
            grad = g_in
        return g_w, g_b, g_xr, g_eta

    def predict(self, x):
        cfg = TrainConfig(sigma_w=0.0, sigma_out=0.0, quantization=False)
        return self.forward(x, cfg, noisy=False)[0]

    def to_network(self):
        """Export to tiles: input ranges as trained, caps ``eta * g_max``."""
        return build_network(self.weights, self.biases, self.hw,
                             input_ranges=[list(x) for x in self.input_ranges],
                             col_scales=self.etas)


def softmax_xent(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = -np.log(p[np.arange(n), labels] + 1e-300).mean()
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def accuracy(logits, labels) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def finetune(model: HWAModel, data, cfg: TrainConfig, rng: RngStream, seed: int = 0):
    """Minibatch hardware-aware training.

    ``data`` is ``(x_train, y_train, x_val, y_val)``.  Returns the trained
    copy of the model and metric rows ``(epoch, split, loss, accuracy, seed)``.
    """
    x_tr, y_tr, x_val, y_val = data
    model = model.copy()
    gen = rng.generator()
    n = x_tr.shape[0]
    steps_per_epoch = -(-n // cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    range_lr = cfg.lr_init if cfg.range_lr is None else cfg.range_lr

    eta_params = [e for tiles in model.etas for e in tiles]
    params = model.weights + model.biases + model.input_ranges + eta_params
    nw, nb, nx = len(model.weights), len(model.biases), len(model.input_ranges)
    opt = AdamW(params, cfg.betas)
    decays = [cfg.weight_decay] * nw + [0.0] * (len(params) - nw)

    metrics = []
    step = 0
    for epoch in range(cfg.epochs):
        order = gen.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, caches = model.forward(x_tr[idx], cfg, gen)
            loss, grad = softmax_xent(logits, y_tr[idx])
            if not np.isfinite(loss):
                raise TrainingFailureError(f"loss diverged at epoch {epoch}, step {step}")
            g_w, g_b, g_xr, g_eta = model.backward(grad, caches, cfg)
            frac = step / max(total - 1, 1)
            lr = cfg.lr_init + (cfg.lr_final - cfg.lr_init) * frac
            rlr = range_lr * lr / cfg.lr_init
            g_eta_flat = [e for tiles in g_eta for e in tiles]
            lrs = ([lr] * (nw + nb)
                   + [rlr if cfg.learn_input_range else 0.0] * nx
                   + [rlr if cfg.learn_conductance_scale else 0.0] * len(eta_params))
            opt.step(g_w + g_b + g_xr + g_eta_flat, lrs, decays)
            for w in model.weights:
                np.clip(w, -1.0, 1.0, out=w)
            for x in model.input_ranges:
                np.maximum(x, XR_MIN, out=x)
            for e in eta_params:
                np.clip(e, ETA_MIN, 1.0, out=e)
            losses.append(loss)
            step += 1
        metrics.append((epoch, "train", float(np.mean(losses)), accuracy(model.predict(x_tr), y_tr), seed))
        val_logits = model.predict(x_val)
        val_loss, _ = softmax_xent(val_logits, y_val)
        metrics.append((epoch, "val", float(val_loss), accuracy(val_logits, y_val), seed))
    return model, metrics


def pretrain(model: HWAModel, data, rng: RngStream, epochs: int = 30, lr: float = 1e-2, seed: int = 0):
    """Noise-free floating-point training used as the starting point."""
    cfg = TrainConfig(sigma_w=0.0, sigma_out=0.0, lr_init=lr, lr_final=lr / 10, epochs=epochs,
                      batch_size=32, quantization=False)
    return finetune(model, data, cfg, rng, seed)


def make_toy_dataset(rng: RngStream, n_train: int = 1024, n_val: int = 256, noise: float = 0.08,
                     scale: float = 1.0):
    """Two interleaved spirals in the plane, labels 0/1."""
    gen = rng.generator()
    n = n_train + n_val
    labels = gen.integers(0, 2, n)
    t = np.sqrt(gen.uniform(0.05, 1.0, n)) * 2.5 * np.pi
    angle = t + np.pi * labels
    r = t / (2.5 * np.pi)
    x = np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)
    x += noise * gen.standard_normal(x.shape)
    x *= scale
    return x[:n_train], labels[:n_train], x[n_train:], labels[n_train:]
