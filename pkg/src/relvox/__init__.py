"""relvox: a volumetric relevance-propagation laboratory.

A small 3D U-Net stack with a layer-wise relevance propagation engine,
amplitude pass/clamp filters, inclusivity metrics, an alpha-sweep harness,
and a one-dimensional filter-calculus sandbox, all driven by a CLI over
synthetic multi-modal volumes.
"""

from .errors import (ConfigError, ConsistencyError, FormatError, RelvoxError,
                     ShapeError, TrainingDiverged)
from .estimators import AmplitudeFilter, RelevanceExplainer, UNetSegmenter
from .filters import FilterSpec, apply_filtered, clamp, parse_filter, pass_band
from .kernels import backward, forward
from .lrp import FINAL, RelevanceMap, SeedSpec, normalize_abs, run_lrp
from .metrics import alpha_sweep, binarize, inclusivity, signal_stats
from .training import TrainLog, dice, predict, soft_dice_loss, train
from .unet import Network, UNetConfig, build, init_kaiming, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "AmplitudeFilter", "ConfigError", "ConsistencyError", "FilterSpec",
    "FINAL", "FormatError", "Network", "RelevanceExplainer", "RelevanceMap",
    "RelvoxError", "SeedSpec", "ShapeError", "TrainLog", "TrainingDiverged",
    "UNetConfig", "UNetSegmenter", "alpha_sweep", "apply_filtered",
    "backward", "binarize", "build", "clamp", "dice", "forward",
    "inclusivity", "init_kaiming", "load_weights", "normalize_abs",
    "parse_filter", "pass_band", "predict", "run_lrp", "save_weights",
    "signal_stats", "soft_dice_loss", "train",
]
