"""Symmetric equilibrium learning of encoder/decoder pairs over exponential families."""
from .errors import (ConfigurationError, ConvergenceError, FormatError, InfeasibleError, InvalidInputError,
                     InvalidParameterError, NonFiniteError, NothingToInferError, SupportTooLargeError,
                     SymVAEError)

__version__ = "0.1.0"
