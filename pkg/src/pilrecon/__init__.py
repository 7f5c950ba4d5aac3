"""Polarity-map reconstruction from filament synoptic maps.

Fits a smooth sign field over a cylindrical embedding of a synoptic map so
that observed filaments lie on its zero level, then aggregates an ensemble
of independently trained tiny networks into a polarity map with per-pixel
confidence.
"""

from .geometry import GridSpec, ReferencePointSet, band_masks, embed_all, embed_pixel, latitude_of_row, pole_polarities, reference_grid
from .loss import LossBreakdown, LossWeights, PixelPartition, build_partition, evaluate
from .metrics import ErrorReport, error_fractions, pearson, pixel_counts
from .net import AdamState, MlpParams, MlpSpec, adam_step, backward, forward, init_params, load_params, save_params, spatial_gradient
from .rasters import ConfidenceMap, FilamentMask, PolarityMap, RasterFormatError, downsample, load_raster, load_reference_points, save_raster, save_reference_points
from .synth import SynthSpec, generate
from .trainer import TrainConfig, TrainedModel, TrainingDiverged, predict_map, train_single
from .ensemble import EnsembleResult, aggregate, aggregate_majority, aggregate_mean, train_ensemble

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
