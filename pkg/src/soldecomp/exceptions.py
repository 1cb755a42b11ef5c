"""Exception and warning types raised by the solver library."""


class InvalidArgumentError(ValueError):
    """Raised when an argument violates a documented precondition."""


class CoefficientBoundError(InvalidArgumentError):
    """Raised when a sampled coefficient is non-positive or outside its bounds."""


class OperatorNotNonnegativeError(ValueError):
    """Raised when an energy form evaluates to a clearly negative value."""


class NoConvergenceError(RuntimeError):
    """Raised when conjugate gradients exhausts its iteration budget.

    Attributes
    ----------
    residual : float
        Euclidean norm of the final residual.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class BootstrapRequiredError(RuntimeError):
    """Raised when a three-level scheme is stepped without two history levels."""


class StabilityWarning(UserWarning):
    """Emitted when a weight lies below the proven unconditional-stability threshold."""
