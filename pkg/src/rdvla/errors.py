"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """A numeric parameter is outside its valid range."""


class ConfigError(ValueError):
    """A configuration is internally inconsistent."""


class CapacityError(ValueError):
    """An input exceeds a fixed capacity (e.g. entity slots)."""


class BudgetError(RuntimeError):
    """A recurrence depth is outside the allowed iteration budget."""


class UsageError(RuntimeError):
    """An API was called in a state where it is not meaningful."""


class CalibrationError(RuntimeError):
    """Threshold calibration could not reach its target."""

    def __init__(self, message, achieved_range=None):
        super().__init__(message)
        self.achieved_range = achieved_range


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite during training."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class IntegrityError(IOError):
    """A serialized file failed its checksum or is truncated."""


class IncompatibleVersionError(IOError):
    """A serialized file was written by an unsupported format version."""
