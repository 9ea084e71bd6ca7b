"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A spec, dataset, or configuration failed its invariant checks."""


class NotGloballyLipschitz(RuntimeError):
    """Raised when a global curvature bound does not exist (Poisson fidelity).

    Callers should either use the separable majorizer path or supply a
    region-restricted bound themselves.
    """


class ConvergenceError(RuntimeError):
    """An iterative routine exhausted its iteration budget.

    Carries the last iterate and residual so callers can diagnose or restart.
    """

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
