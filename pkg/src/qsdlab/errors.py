"""Exception hierarchy for qsdlab."""


class QsdLabError(Exception):
    """Base class for all qsdlab errors."""


class ChainFormatError(QsdLabError, ValueError):
    """A chain or distribution document could not be parsed."""


class InvalidOrder(QsdLabError, ValueError):
    pass


class InvalidRates(QsdLabError, ValueError):
    pass


class SurvivalUnderflow(QsdLabError, ArithmeticError):
    """The conditioning mass 1 - nu Q^n(0) vanished numerically."""


class PosetTooLarge(QsdLabError):
    pass


class InstanceTooLarge(QsdLabError):
    pass


class NotDominated(QsdLabError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class OrderViolation(QsdLabError):
    """A coupled pair of trajectories lost its ordering.

    This can only happen if a domination check passed when it should not have,
    so it is treated as fatal.
    """


class HypothesisFailed(QsdLabError):
    pass


class OutOfFamily(QsdLabError, ValueError):
    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = x


class NegativeWeight(QsdLabError, ArithmeticError):
    def __init__(self, x, value):
        super().__init__(f"recursion produced negative weight {value:.3e} at x={x}")
        self.x = x
        self.value = value


class NotIrreducible(QsdLabError):
    pass


class NotAQsd(QsdLabError):
    pass


class NotConverged(QsdLabError):
    pass


class InconsistentInputs(QsdLabError):
    pass


class SeriesNotConverged(QsdLabError):
    pass
