"""Exception hierarchy shared across the package.

The CLI maps these to exit codes: ConfigError -> 1, DataError and its
subclasses -> 2, NumericError -> 3.
"""


class ProtomixError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ProtomixError):
    """Invalid configuration value, flag, or config-file key."""


class DataError(ProtomixError):
    """Problem with input data (files, label maps, sample pools)."""


class ContainerFormatError(DataError):
    """Malformed container file: bad magic, truncation, or inconsistent header."""


class DimensionMismatchError(DataError):
    """Cube and label grid (or checkpoint and dataset) dimensions disagree."""


class SplitError(DataError):
    """Few-shot split cannot be formed (a class has too few samples)."""


class EpisodeError(DataError):
    """Episode cannot be sampled from the pool."""


class MixingError(DataError):
    """Query mixing precondition violated (e.g. single-query set)."""


class LossError(DataError):
    """Loss precondition violated (empty class, label outside episode)."""


class EvaluationError(DataError):
    """Evaluation precondition violated (empty reference set, bad palette)."""


class ShapeError(ProtomixError):
    """Tensor operands have incompatible shapes."""


class NumericError(ProtomixError):
    """Numeric failure: non-finite loss, degenerate normalization."""


class CheckpointError(DataError):
    """Malformed checkpoint file."""
