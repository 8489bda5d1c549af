class WaveCRNError(Exception):
    """Base class for all package errors."""


class DimensionError(WaveCRNError, ValueError):
    pass


class NumericError(WaveCRNError, ArithmeticError):
    pass


class StateError(WaveCRNError, RuntimeError):
    """A backward pass was requested without a matching forward cache."""


class FormatError(WaveCRNError, ValueError):
    """Malformed or unsupported file content (WAV, packed bits)."""


class DegenerateInputError(WaveCRNError, ValueError):
    pass


class CheckpointError(WaveCRNError, ValueError):
    pass


class ConfigError(WaveCRNError, ValueError):
    pass
