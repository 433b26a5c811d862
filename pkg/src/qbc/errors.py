"""Exception hierarchy shared by all qbc modules."""


class QbcError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(QbcError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(QbcError, ValueError):
    """A request has no valid answer (e.g. an empty preimage)."""


class ConfigError(ParameterError):
    """A session or experiment configuration is invalid."""


class ProtocolError(QbcError):
    """A message arrived out of order or in the wrong phase."""


class FrameError(QbcError):
    """A wire frame is truncated, oversized or not valid JSON."""
