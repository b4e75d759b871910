class CQError(Exception):
    """Base class for library errors."""


class DomainError(CQError):
    pass


class ParameterError(CQError):
    pass


class ConfigurationError(CQError):
    pass


class InclusionError(CQError):
    """A mollification sample point left the region it is supposed to stay in."""


class StructuralError(CQError):
    pass


class MeshParseError(CQError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CalibrationError(CQError):
    def __init__(self, message, history=()):
        self.history = list(history)
        super().__init__(message)


class UsageError(CQError):
    """An operation was called with incompatible arguments."""
