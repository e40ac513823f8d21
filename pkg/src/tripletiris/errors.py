"""Exception types shared across the package."""


class DatasetError(ValueError):
    """Raised for missing, empty or malformed image corpora."""


class FormatError(ValueError):
    """Raised when a binary file has a bad magic, version or layout."""


class ChecksumError(FormatError):
    """Raised when a binary file fails its CRC32 check."""


class ConfigMismatchError(ValueError):
    """Raised when a checkpoint does not match the requested model config."""


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss or gradient."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    """Raised for unknown keys or unparsable values in a run configuration."""
