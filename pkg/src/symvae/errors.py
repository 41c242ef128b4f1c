"""Exception hierarchy shared by all modules."""


class SymVAEError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(SymVAEError, ValueError):
    pass


class InvalidParameterError(SymVAEError, ValueError):
    pass


class ConfigurationError(SymVAEError, ValueError):
    pass


class SupportTooLargeError(SymVAEError, ValueError):
    pass


class InfeasibleError(SymVAEError, ValueError):
    pass


class NothingToInferError(SymVAEError, ValueError):
    pass


class NonFiniteError(SymVAEError, FloatingPointError):
    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class ConvergenceError(SymVAEError, RuntimeError):
    """Raised when an iterative solver stops without meeting its tolerance.

    The partial result is attached so the caller can decide what to do.
    """

    def __init__(self, message, residual=None, trace=None, result=None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace
        self.result = result


class FormatError(SymVAEError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
