"""Analog in-memory computing crossbar simulation with post-training
input-range and conductance-range calibration."""

from .calibration import (
    CalibrationConfig,
    CalibrationReport,
    calibrate_network,
    collect_input_samples,
    column_peak_currents,
    optimize_conductance_ranges,
    optimize_input_range,
)
from .core import (
    AnalogTile,
    NoiseModel,
    RngStream,
    TileHardwareConfig,
    adc_quantize,
    apply_drift,
    dac_quantize,
    ideal_mvm,
    program_conductances,
    read_noise,
)
from .crossbar import ForwardMode, program_tile, saturation_current, tile_forward
from .errors import (
    AnalogError,
    CalibrationDataError,
    DegenerateRangeError,
    InvalidConfigError,
    ManifestParseError,
    MappingDomainError,
    ShapeError,
    SolverError,
    TemporalOrderError,
    TrainingFailureError,
)
from .experiments import ExperimentConfig, default_config, load_config, run_experiment
from .irdrop import dense_nodal_currents, ir_drop_currents
from .mapping import (
    LayerShape,
    TileAssignment,
    UtilizationReport,
    decode_differential,
    encode_differential,
    load_manifest,
    make_tile,
    map_layer,
    map_network,
    parse_manifest,
    partition_dim,
    roberta_base_manifest_path,
)
from .network import MappedNetwork, build_network
from .training import HWAModel, TrainConfig, finetune, input_range_gradient, noisy_forward

__version__ = "0.1.0"
