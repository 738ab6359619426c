"""Seizure classification from multi-channel EEG with small transformer variants."""

from .exceptions import ConfigError, DataError, LctError, NumericError
from .models import Model, ModelConfig, build_model, forward
from .preprocess import SegmentSet, SplitSet, build_segment_set, split
from .synth import SynthConfig, generate_synthetic
from .tensor import Tensor, no_grad
from .train import Metrics, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "LctError", "NumericError",
    "Model", "ModelConfig", "build_model", "forward",
    "SegmentSet", "SplitSet", "build_segment_set", "split",
    "SynthConfig", "generate_synthetic",
    "Tensor", "no_grad",
    "Metrics", "TrainConfig", "evaluate", "train",
    "__version__",
]
