"""A feed-forward network whose dense layers live on analog tiles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import AnalogTile, NoiseModel, RngStream, TileHardwareConfig
from .crossbar import ForwardMode, program_tile, tile_forward
from .errors import ShapeError
from .mapping import LayerShape, TileAssignment, make_tile, map_network

TileKey = Tuple[int, int]  # (layer index, tile index within the layer)


@dataclass
class AnalogLayer:
    name: str
    weight: np.ndarray  # (in, out), unit weights in [-1, 1]
    bias: np.ndarray
    activation: str
    assignments: List[TileAssignment]
    tiles: List[AnalogTile]

    @property
    def shape(self):
        return self.weight.shape


@dataclass
class MappedNetwork:
    """Dense layers on tiles with a digital bias/activation periphery.

    Partial products of the tiles covering one layer are summed digitally.
    """

    layers: List[AnalogLayer]
    config: TileHardwareConfig
    report: Optional[object] = None

    def tile_keys(self):
        return [(li, ti) for li, layer in enumerate(self.layers) for ti in range(len(layer.tiles))]

    def tile(self, key: TileKey) -> AnalogTile:
        return self.layers[key[0]].tiles[key[1]]

    def set_tile(self, key: TileKey, tile: AnalogTile) -> None:
        self.layers[key[0]].tiles[key[1]] = tile

    def copy(self) -> "MappedNetwork":
        layers = [AnalogLayer(l.name, l.weight.copy(), l.bias.copy(), l.activation, list(l.assignments),
                              [t.copy() for t in l.tiles]) for l in self.layers]
        return MappedNetwork(layers, self.config, self.report)

    def program(self, noise: NoiseModel, rng: RngStream, at: float = 0.0) -> "MappedNetwork":
        net = self.copy()
        for li, ti in net.tile_keys():
            net.set_tile((li, ti), program_tile(net.tile((li, ti)), noise, rng.child(li, ti), at))
        return net

    def forward(self, x, mode: Optional[ForwardMode] = None, rng: Optional[RngStream] = None,
                noise: Optional[NoiseModel] = None, record: Optional[Dict[TileKey, list]] = None):
        """Run a batch through every layer.

        ``record``, when given, receives the input slice reaching each tile.
        """
        mode = ForwardMode.ideal() if mode is None else mode
        h = np.atleast_2d(np.asarray(x, dtype=float))
        if h.shape[1] != self.layers[0].shape[0]:
            raise ShapeError(f"network expects {self.layers[0].shape[0]} inputs, got {h.shape[1]}")
        for li, layer in enumerate(self.layers):
            out = np.zeros((h.shape[0], layer.shape[1]))
            for ti, (a, tile) in enumerate(zip(layer.assignments, layer.tiles)):
                xs = h[:, a.rows]
                if record is not None:
                    record.setdefault((li, ti), []).append(xs)
                sub = None if rng is None else rng.child(li, ti)
                out[:, a.cols] += tile_forward(tile, xs, mode, sub, noise)
            out += layer.bias
            h = np.maximum(out, 0.0) if layer.activation == "relu" else out
        return h


def build_network(weights, biases, config: TileHardwareConfig, activations=None, input_ranges=None,
                  col_scales=None, names=None) -> MappedNetwork:
    """Map dense layers onto tiles.

    ``input_ranges[l][t]`` and ``col_scales[l][t]`` (the per-bitline
    conductance-range factor, ``cap = scale * g_max``) optionally set the
    state of tile ``t`` of layer ``l``; defaults are 1.
    """
    n = len(weights)
    activations = activations or ["relu"] * (n - 1) + ["none"]
    names = names or [f"layer{i}" for i in range(n)]
    shapes = [LayerShape(nm, "linear", w.shape[0], w.shape[1], True) for nm, w in zip(names, weights)]
    assignments, report = map_network(shapes, config)
    layers = []
    for li, (shape, w, b) in enumerate(zip(shapes, weights, biases)):
        mine = [a for a in assignments if a.layer == shape.name]
        tiles = []
        for ti, a in enumerate(mine):
            xr = 1.0 if input_ranges is None else input_ranges[li][ti]
            scale = 1.0 if col_scales is None else np.asarray(col_scales[li][ti], dtype=float)
            cap = np.broadcast_to(scale * config.g_max, (a.col_span[1],))
            tile = make_tile(w[a.rows, a.cols], config, xr, g_cap=cap)
            # the conductance-range factor is part of the trained function
            tile.out_scale = np.ones(a.col_span[1])
            tiles.append(tile)
        layers.append(AnalogLayer(shape.name, np.asarray(w, float).copy(), np.asarray(b, float).copy(),
                                  activations[li], mine, tiles))
    return MappedNetwork(layers, config, report)
