"""Exception hierarchy.

Every error carries a ``category`` string that the command-line front-end
maps onto a distinct exit code.
"""

EXIT_CODES = {
    "io": 3,
    "parse": 4,
    "model": 5,
    "drift": 6,
    "numeric": 7,
}


class FluidqError(Exception):
    category = "model"

    def __init__(self, message, hint=None):
        super().__init__(message)
        self.hint = hint

    @property
    def exit_code(self):
        return EXIT_CODES[self.category]


class ModelError(FluidqError, ValueError):
    """Invalid rate matrix, rates, binning or other model input."""

    category = "model"


class DriftError(FluidqError, ValueError):
    """Operation undefined for the sign (or zero value) of the drift."""

    category = "drift"


class UnattainableTargetError(DriftError):
    """LOLP target below the negative-drift lower bound."""

    def __init__(self, message, bound, hint=None):
        super().__init__(message, hint=hint)
        self.bound = bound


class NumericalError(FluidqError, ArithmeticError):
    """A numerical routine failed its own accuracy checks."""

    category = "numeric"


class TraceFormatError(FluidqError, ValueError):
    category = "parse"


class InputFileError(FluidqError, OSError):
    category = "io"
