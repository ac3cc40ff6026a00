"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and input problems exit
with code 2, runtime failures (including training that never reaches the
solvable threshold) exit with code 3.
"""


class ActionRaidError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ActionRaidError, ValueError):
    """Non-finite values, mismatched shapes, or out-of-contract arguments."""


class ProtocolError(ActionRaidError, RuntimeError):
    """An operation was called in a state that forbids it (e.g. step after done)."""


class FormatError(ActionRaidError, ValueError):
    """A serialized artifact (weight file, snapshot) is corrupt or mismatched."""


class ConfigError(ActionRaidError, ValueError):
    """A run configuration failed schema validation or refers to missing files."""


class TrainingFailedError(ActionRaidError, RuntimeError):
    """Training finished without reaching the solvable threshold.

    Carries the training log so callers can inspect the reward curve.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log
