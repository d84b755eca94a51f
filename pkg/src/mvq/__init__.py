"""Online learning of motion-invariant convolutional features from video."""

from ._backend import BACKEND
from .discretization import FilterShape
from .dynamics import DynamicsParams, FilterState
from .flow import FlowField, horn_schunck
from .pipeline import LayerConfig, MetricsRow, batch_mi, run_multilayer, train_layer
from .presets import PRESETS, preset
from .signal import AttentionMap, BlurSchedule, ColorField

__version__ = "0.1.0"

__all__ = [
    "AttentionMap", "BACKEND", "BlurSchedule", "ColorField", "DynamicsParams", "FilterShape",
    "FilterState", "FlowField", "LayerConfig", "MetricsRow", "PRESETS", "batch_mi",
    "horn_schunck", "preset", "run_multilayer", "train_layer",
]
