"""Exception hierarchy shared by all pstrata modules."""


class PStrataError(Exception):
    """Base class for every error raised by this package."""


# -- data ingestion / validation ---------------------------------------------

class DataError(PStrataError, ValueError):
    pass


class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"required column {column!r} not found in header")
        self.column = column


class InvalidValue(DataError):
    def __init__(self, row, column, value, reason=""):
        msg = f"row {row}: invalid value {value!r} in column {column!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
        self.row = row
        self.column = column


class InconsistentMissingness(DataError):
    def __init__(self, row, reason):
        super().__init__(f"row {row}: {reason}")
        self.row = row


class InvalidSubject(DataError):
    pass


class WrongEndpointKind(DataError):
    pass


# -- model fitting -----------------------------------------------------------

class FitError(PStrataError, ArithmeticError):
    pass


class Separation(FitError):
    pass


class Singular(FitError):
    pass


class NotConverged(FitError):
    pass


class DimensionMismatch(PStrataError, ValueError):
    pass


# -- weighting / estimation --------------------------------------------------

class DegenerateStratum(PStrataError):
    pass


class UnknownBLevel(PStrataError, KeyError):
    pass


class EmptyPseudoPopulation(PStrataError):
    pass


class AllZeroWeights(PStrataError, ValueError):
    pass


class NoEvents(FitError):
    pass


class MonotoneLikelihood(FitError):
    pass


class TooManyFailures(PStrataError):
    pass
