"""Layer-to-tile mapping, differential weight encoding and utilization.

Manifest format (CSV with a header line, ``#`` starts a comment)::

    name,kind,rows,cols,bias
    layer.0.attention.self.query,linear,768,768,1
    embeddings.word_embeddings,digital,50265,768,0

``kind`` is ``linear``, ``conv`` (rows already unfolded as kh*kw*c_in) or
``digital`` (counted in the parameter total but never mapped).  ``bias`` is
0/1; a bias vector of length ``cols`` is counted as a mapped parameter of
its layer even though it is applied digitally.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .core import AnalogTile, TileHardwareConfig
from .errors import InvalidConfigError, ManifestParseError, MappingDomainError, ShapeError

KINDS = ("linear", "conv", "digital")
MANIFEST_FIELDS = ("name", "kind", "rows", "cols", "bias")


@dataclass(frozen=True)
class LayerShape:
    name: str
    kind: str
    rows: int
    cols: int
    bias: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"unknown layer kind {self.kind!r}")
        if self.rows < 1 or self.cols < 1:
            raise InvalidConfigError(f"layer {self.name} needs rows, cols >= 1")

    @property
    def mapped(self) -> bool:
        return self.kind != "digital"

    @property
    def n_params(self) -> int:
        return self.rows * self.cols + (self.cols if self.bias else 0)


@dataclass(frozen=True)
class TileAssignment:
    layer: str
    tile_index: int
    row_span: Tuple[int, int]
    col_span: Tuple[int, int]

    @property
    def rows(self) -> slice:
        return slice(self.row_span[0], self.row_span[0] + self.row_span[1])

    @property
    def cols(self) -> slice:
        return slice(self.col_span[0], self.col_span[0] + self.col_span[1])

    @property
    def cells(self) -> int:
        return self.row_span[1] * self.col_span[1]


@dataclass(frozen=True)
class UtilizationReport:
    """Mapping summary.

    ``avg_utilization`` is the mean over mapped layers of each layer's
    occupied fraction of its own tiles; ``tile_utilization`` is the plain
    mean over tiles.
    """

    total_params: int
    mapped_params: int
    num_tiles: int
    avg_utilization: float
    tile_utilization: float


def partition_dim(m: int, tile: int) -> List[int]:
    """Full-size spans with the remainder ``m mod tile`` in the last span."""
    if m < 1 or tile < 1:
        raise InvalidConfigError("partition_dim needs m >= 1 and tile >= 1")
    k = -(-m // tile)
    return [tile] * (k - 1) + [m - (k - 1) * tile]


def _offsets(spans):
    starts = np.concatenate([[0], np.cumsum(spans)[:-1]])
    return [(int(s), int(n)) for s, n in zip(starts, spans)]


def map_layer(shape: LayerShape, config: TileHardwareConfig, first_index: int = 0) -> List[TileAssignment]:
    out = []
    for r in _offsets(partition_dim(shape.rows, config.rows)):
        for c in _offsets(partition_dim(shape.cols, config.cols)):
            out.append(TileAssignment(shape.name, first_index + len(out), r, c))
    return out


def map_network(shapes: Sequence[LayerShape], config: TileHardwareConfig):
    """Assign every mapped layer to its own set of tiles.

    Returns ``(assignments, report)``.
    """
    if not shapes:
        raise InvalidConfigError("cannot map an empty list of layers")
    assignments: List[TileAssignment] = []
    layer_utils = []
    tile_cells = config.rows * config.cols
    for shape in shapes:
        if not shape.mapped:
            continue
        tiles = map_layer(shape, config, len(assignments))
        assignments.extend(tiles)
        layer_utils.append(shape.rows * shape.cols / (len(tiles) * tile_cells))
    if not assignments:
        raise InvalidConfigError("no mappable layers in the list")
    cells = sum(a.cells for a in assignments)
    report = UtilizationReport(
        total_params=sum(s.n_params for s in shapes),
        mapped_params=sum(s.n_params for s in shapes if s.mapped),
        num_tiles=len(assignments),
        avg_utilization=float(np.mean(layer_utils)),
        tile_utilization=cells / (len(assignments) * tile_cells),
    )
    return assignments, report


def encode_differential(w_unit, g_cap):
    """Map unit weights in ``[-1, 1]`` to a ``(g_plus, g_minus)`` pair."""
    w = np.asarray(w_unit, dtype=float)
    cap = np.broadcast_to(np.asarray(g_cap, dtype=float), w.shape[-1:])
    if np.any(np.abs(w) > 1):
        raise MappingDomainError("unit weights must lie in [-1, 1]; clip before encoding")
    return cap * np.maximum(w, 0.0), cap * np.maximum(-w, 0.0)


def decode_differential(g_plus, g_minus, g_cap):
    return (np.asarray(g_plus) - np.asarray(g_minus)) / np.asarray(g_cap, dtype=float)


def make_tile(w_unit, config: TileHardwareConfig, input_range: float = 1.0, g_cap=None,
              out_scale=None, out_offset=None) -> AnalogTile:
    """Build an unprogrammed tile holding ``w_unit`` (padded to the tile size is
    not done: the tile takes the shape of ``w_unit``)."""
    w = np.asarray(w_unit, dtype=float)
    if w.ndim != 2:
        raise ShapeError("weights must be a 2-D matrix")
    rows, cols = w.shape
    if rows > config.rows or cols > config.cols:
        raise ShapeError(f"{rows}x{cols} block does not fit a {config.rows}x{config.cols} tile")
    cap = np.full(cols, config.g_max) if g_cap is None else np.broadcast_to(
        np.asarray(g_cap, dtype=float), (cols,)).copy()
    gp, gm = encode_differential(w, cap)
    tile = AnalogTile(
        g_plus=gp,
        g_minus=gm,
        input_range=float(input_range),
        out_scale=np.ones(cols) if out_scale is None else np.asarray(out_scale, dtype=float).copy(),
        out_offset=np.zeros(cols) if out_offset is None else np.asarray(out_offset, dtype=float).copy(),
        g_col_cap=cap,
        config=config,
    )
    # caps below g_max shrink the analog signal; the periphery undoes it
    tile.out_scale = tile.out_scale * config.g_max / cap
    tile.validate()
    return tile


def parse_manifest(text: str) -> List[LayerShape]:
    lines = [(n, ln) for n, ln in enumerate(text.splitlines(), 1)
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ManifestParseError("manifest is empty")
    header_line, header = lines[0]
    fields = [f.strip() for f in header.split(",")]
    if tuple(fields) != MANIFEST_FIELDS:
        raise ManifestParseError(f"expected header {','.join(MANIFEST_FIELDS)}", header_line)
    shapes = []
    for lineno, line in lines[1:]:
        row = next(csv.reader(io.StringIO(line)))
        if len(row) != len(MANIFEST_FIELDS):
            raise ManifestParseError(f"expected {len(MANIFEST_FIELDS)} fields, got {len(row)}", lineno)
        name, kind, rows, cols, bias = (f.strip() for f in row)
        try:
            shapes.append(LayerShape(name, kind, int(rows), int(cols), bool(int(bias))))
        except (ValueError, InvalidConfigError) as exc:
            raise ManifestParseError(str(exc), lineno) from None
    if not shapes:
        raise ManifestParseError("manifest has no layer records")
    return shapes


def load_manifest(path) -> List[LayerShape]:
    return parse_manifest(Path(path).read_text())


def roberta_base_manifest_path() -> Path:
    return Path(str(resources.files("aimc_ptcal") / "data" / "roberta_base.csv"))


def layers_per_tile_count(shapes: Iterable[LayerShape], config: TileHardwareConfig):
    return {s.name: len(map_layer(s, config)) for s in shapes if s.mapped}
