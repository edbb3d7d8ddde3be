"""Exception types shared across the package."""


class WqImputeError(Exception):
    """Base class for all errors raised by this package."""


class DataError(WqImputeError):
    """Malformed input data, bad indices, or incompatible datasets."""


class ConfigError(WqImputeError):
    """Invalid configuration (ratios, rank bounds, flag combinations)."""


class CheckpointError(WqImputeError):
    """Unreadable, corrupt, or version-mismatched checkpoint files."""


class DivergenceError(WqImputeError):
    """Training produced a non-finite loss.

    Carries the epoch at which divergence was detected, the learning rate
    in effect, and the trace accumulated so far (may be None for callers
    that do not track one).
    """

    def __init__(self, message, epoch, learning_rate, trace=None):
        super().__init__(message)
        self.epoch = epoch
        self.learning_rate = learning_rate
        self.trace = trace
