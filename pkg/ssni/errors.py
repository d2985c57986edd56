"""Exception hierarchy shared by every layer of the lab."""


class SSNIError(Exception):
    """Base class for all lab errors."""


class ConfigError(SSNIError, ValueError):
    """Invalid or unknown configuration value."""


class RangeError(SSNIError, ValueError):
    """Timestep or noise level outside the schedule's range."""


class ShapeMismatchError(SSNIError, ValueError):
    """Tensor, plan or label shapes disagree."""


class NonFiniteError(SSNIError, RuntimeError):
    """A score, gradient, norm or loss became NaN/inf."""


class TrainingDivergedError(NonFiniteError):
    """Training loss became non-finite."""


class CheckpointError(SSNIError):
    """Checkpoint header missing, malformed or of an unknown version."""
