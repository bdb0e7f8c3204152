class UnmixError(Exception):
    """Base class for all package errors."""


class ParameterError(UnmixError, ValueError):
    pass


class FormatError(UnmixError, ValueError):
    """A file header or payload does not follow the documented layout."""


class SizeMismatchError(FormatError):
    pass


class DegenerateInputError(UnmixError, ValueError):
    pass


class SingularSystemError(UnmixError, ValueError):
    pass


class DivergenceError(UnmixError, RuntimeError):
    """Raised when training loss blows past the divergence threshold."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []
