"""Exception types shared across the package."""


class DenseShiftError(Exception):
    """Base class for all package errors."""


class ShapeError(DenseShiftError, ValueError):
    """Tensor shapes disagree; ``layer`` names the offending layer index."""

    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class StaleCacheError(DenseShiftError):
    """A forward cache no longer matches the network parameters."""


class NumericError(DenseShiftError, FloatingPointError):
    """Non-finite values appeared in a loss, gradient or parameter."""


class ConfigError(DenseShiftError, ValueError):
    pass


class DataError(DenseShiftError, IOError):
    pass


class FormatError(DenseShiftError, ValueError):
    """A binary file (model, packed weights) failed validation."""


class ConversionError(DenseShiftError, ValueError):
    pass


class OverflowRiskError(DenseShiftError, OverflowError):
    """An integer accumulator could exceed its width."""
