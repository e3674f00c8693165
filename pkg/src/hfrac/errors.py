"""Exception hierarchy shared across the package."""


class HfracError(Exception):
    pass


class InputError(HfracError, ValueError):
    """Malformed or out-of-range input."""


class RegimeError(HfracError):
    """Operation not defined for the given parameter regime (e.g. sp >= Q, p != 2)."""


class SingularityError(HfracError, ZeroDivisionError):
    pass


class EvaluationError(HfracError):
    """A field was evaluated outside the region where it is known."""


class ResourceError(HfracError):
    pass


class NumericalError(HfracError):
    """Iterative method failed; carries the last residual when available."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PreconditionError(HfracError):
    pass
