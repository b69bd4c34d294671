"""Exception types shared across the toolkit.

Exit-code mapping used by the CLI: usage/state problems exit 1, data
problems exit 2, provider/transport problems exit 3.
"""


class QeleakError(Exception):
    """Base class for all toolkit errors."""


class DataError(QeleakError):
    """Malformed or inconsistent input data (claims, corpus, config files)."""


class ConfigError(DataError):
    """Invalid run configuration values."""


class PipelineStateError(QeleakError):
    """Stage run out of order, config drift without --force, or a held lock."""


class ProviderError(QeleakError):
    """Transport or protocol failure talking to a model endpoint."""

    def __init__(self, message: str, status: int | None = None, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class IndexFormatError(DataError):
    """Persisted index has a mismatched format or analyzer version."""
