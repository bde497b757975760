"""Exception types raised by toltest."""


class ToltestError(Exception):
    """Base class for all library errors."""


class InvalidDomainError(ToltestError, ValueError):
    pass


class DimensionError(ToltestError, ValueError):
    pass


class NormalizationError(ToltestError, ValueError):
    pass


class UnsupportedExponentError(ToltestError, ValueError):
    pass


class InvalidBudgetError(ToltestError, ValueError):
    pass


class InvalidScalingError(ToltestError, ValueError):
    pass


class DegenerateConditioningError(ToltestError, ValueError):
    pass


class InvalidSubsetError(ToltestError, ValueError):
    pass


class UnsupportedToleranceError(ToltestError, ValueError):
    pass


class InvalidParametersError(ToltestError, ValueError):
    pass


class OutOfRangeError(ToltestError, ValueError):
    pass


class CalibrationError(ToltestError, RuntimeError):
    """No threshold constant separates the two error curves.

    The sorted Z/tau ratios observed on each side are attached so callers can
    see how far apart the curves were.
    """

    def __init__(self, message, close_ratios=None, far_ratios=None):
        super().__init__(message)
        self.close_ratios = close_ratios
        self.far_ratios = far_ratios


class LPSolveError(ToltestError, RuntimeError):
    pass
