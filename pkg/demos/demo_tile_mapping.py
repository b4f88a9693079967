"""
Mapping a transformer onto 512x512 tiles
========================================

Tile count and utilization for the bundled RoBERTa-base layer shapes,
followed by a look at how one awkward layer gets split.
"""

from aimc_ptcal import LayerShape, TileHardwareConfig, load_manifest, map_layer, map_network
from aimc_ptcal.mapping import roberta_base_manifest_path

hw = TileHardwareConfig()
shapes = load_manifest(roberta_base_manifest_path())
assignments, report = map_network(shapes, hw)
print(f"tiles {report.num_tiles}, mapped params {report.mapped_params:,}, "
      f"average utilization {100 * report.avg_utilization:.2f} %")

# feed-forward output projection: six tile rows, and the 768 columns
# leave every second tile half empty
ffn = LayerShape("ffn_out", "linear", 3072, 768, True)
for a in map_layer(ffn, hw):
    r, c = a.rows, a.cols
    print(f"rows {r.start:>4}-{r.stop:<4} cols {c.start:>3}-{c.stop:<3} {a.cells / (hw.rows * hw.cols):4.0%}")
