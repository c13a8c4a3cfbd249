"""Exception hierarchy shared by all funcobs modules."""


class FuncObsError(Exception):
    """Base class for every error raised by funcobs."""


class NonFinite(FuncObsError, ValueError):
    pass


class DimensionMismatch(FuncObsError, ValueError):
    pass


# Name used by the file loaders.
DimensionError = DimensionMismatch


class ParseError(FuncObsError, ValueError):
    pass


class NoConvergence(FuncObsError, ArithmeticError):
    pass


class PreconditionViolated(FuncObsError):
    pass


class TooLarge(FuncObsError):
    pass


class ConditionFailed(FuncObsError):
    """A sufficient existence condition does not hold.

    This never means that no observer exists: the conditions checked here
    are sufficient, not necessary.
    """

    caveat = (
        "note: the rank conditions are sufficient but not necessary; "
        "failure does not preclude a functional observer"
    )


class H1Failed(ConditionFailed):
    pass


class H2Failed(ConditionFailed):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NotDetectable(FuncObsError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class PlacementError(FuncObsError):
    pass


class ResidualTooLarge(FuncObsError):
    pass


class Infeasible(FuncObsError):
    pass


class InconsistentDynamics(FuncObsError):
    pass
