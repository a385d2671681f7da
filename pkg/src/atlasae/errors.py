"""Exception types shared across the package."""


class AtlasError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(AtlasError):
    """Invalid configuration: bad dimensions, enums, hyperparameters."""


class ShapeError(AtlasError):
    """Array arguments with incompatible shapes."""


class DataFormatError(AtlasError):
    """Malformed persisted data (CSV rows, checkpoint schema)."""


class UncoveredPointError(AtlasError):
    """A point lies outside every cover ball of a partition of unity."""

    def __init__(self, message, nearest_distance=None):
        super().__init__(message)
        self.nearest_distance = nearest_distance


class EmptyClusterError(AtlasError):
    """A clustering produced an empty cluster."""


class PriorCollapseError(AtlasError):
    """Rejection sampling for a prior accepts (almost) nothing."""

    def __init__(self, message, cluster=None):
        super().__init__(message)
        self.cluster = cluster


class NumericError(AtlasError):
    """Non-finite value encountered during optimization."""

    def __init__(self, message, step=None, component=None):
        super().__init__(message)
        self.step = step
        self.component = component
