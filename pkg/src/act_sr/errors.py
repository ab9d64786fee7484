"""Exception hierarchy shared by every module of the package."""


class ActError(Exception):
    """Base class for all errors raised by act_sr."""


class DimensionError(ActError, ValueError):
    """Operand shapes are incompatible."""


class GeometryError(ActError, ValueError):
    """Spatial geometry (extents, token sizes, strides) is inconsistent."""


class ConfigurationError(ActError, ValueError):
    """A hyperparameter combination is not legal."""


class UsageError(ActError, RuntimeError):
    """An API was called in a state that does not support it."""


class NonFiniteError(ActError, ArithmeticError):
    """An operation produced NaN or Inf."""


class TrainingError(ActError, RuntimeError):
    """Training hit a non-finite loss or gradient."""


class WeightFileError(ActError):
    """Base class for weight-file problems."""


class ChecksumError(WeightFileError):
    """Weight file is truncated or corrupted."""


class VersionError(WeightFileError):
    """Weight file format version is not supported."""


class ConfigMismatchError(WeightFileError):
    """Weight file config differs from the requested config."""


class CorpusError(ActError):
    """Training or evaluation image set is missing, empty or too small."""
