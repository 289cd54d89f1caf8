"""Exception types shared across the package.

The CLI maps these onto process exit codes: config problems exit 1,
data problems exit 2, numerical divergence exits 3.
"""


class KgesubError(Exception):
    """Base class for all package errors."""


class ConfigError(KgesubError):
    """Invalid configuration file or flag combination."""


class DataError(KgesubError):
    """Malformed input data (triple files, vocab files, weight tables)."""


class VocabMismatchError(DataError):
    """A label or id is not valid under the vocabulary in use."""


class DegenerateInputError(KgesubError):
    """Input that makes an operation meaningless (zero frequencies,
    a query whose true answers cover every entity, ...)."""


class CheckpointError(KgesubError):
    """Corrupt, truncated, or version-incompatible checkpoint file."""


class TrainingDivergedError(KgesubError):
    """A non-finite loss or score was produced during training."""
