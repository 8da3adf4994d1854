"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes (config 2, data 3, numeric 4).
"""


class TsunetError(Exception):
    """Base class for all package errors."""


class ConfigError(TsunetError):
    """Invalid specification, hyperparameter, or command configuration."""


class DataError(TsunetError):
    """Input data violates a shape, dtype, or value contract."""


class FormatError(DataError):
    """A serialized artifact (model file, dataset) is corrupt or incompatible."""


class NumericError(TsunetError):
    """A numeric failure such as NaN/Inf during training or inference."""
