"""Exception hierarchy shared by every layer of the harness.

The CLI maps each family onto an exit code, so modules raise the most
specific class that applies rather than a bare ``ValueError``.
"""


class FairFedError(Exception):
    exit_code = 1


class ConfigurationError(FairFedError, ValueError):
    exit_code = 1


class UsageError(FairFedError, ValueError):
    exit_code = 1


class IngestionError(FairFedError):
    exit_code = 2


class TrainingError(FairFedError):
    exit_code = 3


class DegenerateStateError(TrainingError):
    """Raised when the server state cannot be continued (e.g. an all-zero weight vector)."""

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}
