"""Exception types raised across the package."""


class HDLDPError(Exception):
    """Base class for all package errors."""


class ConfigError(HDLDPError, ValueError):
    """Invalid configuration or parameter value."""


class DomainError(HDLDPError, ValueError):
    """An input value lies outside the domain an operation accepts."""


class ParseError(HDLDPError, ValueError):
    """Malformed input file.

    ``row`` and ``column`` are 1-based positions in the file (the header is
    row 1) when they can be determined.
    """

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class TrialError(HDLDPError):
    """A pipeline failure inside one experiment trial."""

    def __init__(self, trial, cause):
        super().__init__(f"trial {trial}: {cause}")
        self.trial = trial
        self.cause = cause
