"""Exception types shared across the package."""


class HybridSimError(Exception):
    """Base class for all toolkit errors."""


class DomainError(HybridSimError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class SingularDesignError(HybridSimError, ValueError):
    """A regression design matrix is rank deficient."""


class RankError(HybridSimError, ValueError):
    """Calibration data lacks the diversity needed to identify parameters."""


class InsufficientDataError(HybridSimError, ValueError):
    """Too few samples to carry out the requested estimate."""


class DivergenceError(HybridSimError, RuntimeError):
    """Iterative optimization diverged."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class LayoutError(HybridSimError, ValueError):
    """Image dimensions are incompatible with the CFA layout."""


class ParameterError(HybridSimError, ValueError):
    """A parameter set violates its invariants."""


class FormatError(HybridSimError, ValueError):
    """A file does not conform to the expected binary or text format."""
