"""Exception hierarchy. ``ValidationError`` subclasses map to CLI exit code 1."""


class ContactFieldError(Exception):
    pass


class ValidationError(ContactFieldError, ValueError):
    """Input data violates a declared invariant."""


class ParseError(ValidationError):
    """A record in an input file could not be decoded."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValidationError):
    pass


class CalibrationError(ValidationError):
    pass


class EmptyProblemError(ValidationError):
    """No force candidates survived for a frame that was gated in contact."""


class SolverError(ContactFieldError):
    pass
