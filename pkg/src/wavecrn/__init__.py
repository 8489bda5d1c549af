"""WaveCRN: convolutional encoder, bidirectional SRU, restricted feature mask,
transposed-convolution decoder, written against plain numpy with handwritten
backward passes."""

from wavecrn.errors import (
    CheckpointError,
    ConfigError,
    DegenerateInputError,
    DimensionError,
    FormatError,
    NumericError,
    StateError,
)
from wavecrn.model import ModelConfig, WaveCRN

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DegenerateInputError",
    "DimensionError",
    "FormatError",
    "ModelConfig",
    "NumericError",
    "StateError",
    "WaveCRN",
]
