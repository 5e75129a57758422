"""Exception types shared across the toolkit."""


class QrnnError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(QrnnError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ArgumentError(QrnnError, ValueError):
    """A scalar argument is outside its valid range."""


class VocabularyError(QrnnError, KeyError):
    """Unknown symbol or id passed to a vocabulary."""


class DataError(QrnnError, ValueError):
    """Malformed input data (reported with file position where known)."""


class ConfigError(QrnnError, ValueError):
    """Invalid run configuration (unknown key, bad type, bad value)."""


class StateError(QrnnError, RuntimeError):
    """Stateful objects used out of order (e.g. cache/layer mismatch)."""


class CheckpointError(QrnnError, ValueError):
    """Corrupt or incompatible checkpoint file."""
