"""Multi-station water level forecasting with a hybrid terrain/learned graph."""

from .data import (
    NormStats,
    StationSeries,
    WindowedDataset,
    chronological_split,
    fit_normalizer,
    impute_missing,
    load_series,
    make_windows,
)
from .errors import ConfigError, DataError, HydroVisionError, TerrainError, TrainingDiverged
from .gcrn import AttentionConfig, graph_conv, probsparse_attention
from .graphs import adaptive_adjacency, hybrid_adjacency
from .model import HydroVision, ModelConfig
from .terrain import ElevationRaster, PatchGrid, downsample, patchify, read_ascii_grid, station_patch_index
from .train import EvalReport, TrainConfig, evaluate, mae, rmse, sampling_prob, train
from .vit import VitConfig, elevation_adjacency, positional_encoding

__version__ = "0.1.0"
