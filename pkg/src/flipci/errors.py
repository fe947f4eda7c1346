class FlipCIError(Exception):
    """Base class for errors raised by flipci."""


class DesignError(FlipCIError, ValueError):
    """The design matrix violates a precondition (rank, identifiability, shape)."""


class ConvergenceError(FlipCIError, ArithmeticError):
    """IRLS did not converge; ``last`` holds the final iterate's coefficients."""

    def __init__(self, message, last=None, iterations=None):
        super().__init__(message)
        self.last = last
        self.iterations = iterations


class DegenerateModelError(FlipCIError, ArithmeticError):
    """Fitted means sit at the boundary of the support (separation or extreme offset).

    ``last`` holds the final iterate's coefficients when available.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class ZeroVarianceError(FlipCIError, ArithmeticError):
    """A flipped score has (numerically) zero variance."""


class InputError(FlipCIError, ValueError):
    """A data file is malformed; the message names the offending cell."""
