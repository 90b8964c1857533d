"""Exception hierarchy shared by every module in the package."""


class HmmError(Exception):
    """Base class for all errors raised by :mod:`hmrnn`."""


class InvalidInputError(HmmError, ValueError):
    """Observations, covariates or array shapes do not match the model."""


class InvalidModelError(HmmError, ValueError):
    """A probability vector or matrix fails its stochasticity check."""


class NumericalFailureError(HmmError, ArithmeticError):
    """A likelihood or gradient became non-finite.

    ``iteration``, ``sequence`` and ``step`` locate the failure when known.
    """

    def __init__(self, message, iteration=None, sequence=None, step=None):
        super().__init__(message)
        self.iteration = iteration
        self.sequence = sequence
        self.step = step


class DegenerateDataError(HmmError, ValueError):
    """Observed data has zero probability under every state."""


class UnsupportedInitializationError(HmmError, ValueError):
    pass


class DivergenceError(HmmError, RuntimeError):
    """Gradient descent loss kept increasing; lower the learning rate."""


class DegenerateConditioningError(HmmError, ValueError):
    """Conditioning on an observation left zero posterior mass."""
