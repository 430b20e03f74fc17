class XferTuneError(Exception):
    """Base class for package errors."""


class SchemaError(XferTuneError):
    """A log file is missing a required column."""


class ConstraintError(XferTuneError, ValueError):
    """A parameter point violates the lattice bounds or stream/pipelining caps."""


class InfeasibleError(XferTuneError, ValueError):
    """The requested clustering cannot be produced from the input."""


class DomainError(XferTuneError, ValueError):
    """A query falls outside the domain a fitted model covers."""


class KBVersionError(XferTuneError):
    """Knowledge-base document version or config fingerprint mismatch."""


class KBFormatError(XferTuneError):
    """Knowledge-base document could not be parsed."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


class NetworkError(XferTuneError):
    """The simulated network could not complete a transfer."""
