"""Exception types shared across the package."""


class GghmError(Exception):
    """Base class for all package errors."""


class ConfigError(GghmError):
    """Invalid configuration value or combination."""


class DimensionError(GghmError):
    """Tensor shapes incompatible with the requested operation."""


class FormatError(GghmError):
    """Malformed binary file (bad magic, version, or truncation)."""


class SamplingError(GghmError):
    """Episode or frame sampling cannot be satisfied by the dataset."""


class DegenerateGraphError(GghmError):
    """Edge normalization hit a zero row-sum."""


class NonFiniteError(GghmError):
    """A forward op produced NaN or Inf while finite checking was on."""


class TrainingDiverged(GghmError):
    """Loss became non-finite; carries the last finite-state snapshot."""

    def __init__(self, message, last_good_state=None, metrics=None):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.metrics = metrics or []
