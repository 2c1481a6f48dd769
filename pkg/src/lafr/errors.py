"""Exception hierarchy shared by every lafr module."""


class LafrError(Exception):
    """Base class for all errors raised by lafr."""


class InvalidSpecError(LafrError, ValueError):
    pass


class InvalidArgumentError(LafrError, ValueError):
    pass


class ShapeError(LafrError, ValueError):
    pass


class FormatError(LafrError, ValueError):
    """A container file is malformed (bad magic, header or payload length)."""


class CorruptDataError(LafrError, ValueError):
    """A container parsed but holds values that violate the type invariants."""


class NumericError(LafrError, ArithmeticError):
    """A non-finite value appeared during training or evaluation."""


class InsufficientDomainsError(LafrError, ValueError):
    pass


class InvalidLabelingError(LafrError, ValueError):
    pass


class ConfigurationError(LafrError, ValueError):
    pass


class ClientFailure(LafrError):
    def __init__(self, client_id, cause):
        super().__init__(f"client {client_id!r} failed: {cause}")
        self.client_id = client_id
        self.cause = cause


class MissingArtifactError(LafrError, FileNotFoundError):
    """An upstream pipeline artifact is absent; the message names the command that makes it."""

    def __init__(self, path, command):
        super().__init__(f"missing artifact {path}; run `lafr {command}` first")
        self.path = path
        self.command = command
