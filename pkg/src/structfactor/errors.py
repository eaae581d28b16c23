"""Exception hierarchy.

Two families matter to callers: ``InputError`` (bad files, bad options,
orders that cannot be fitted) and ``NumericError`` (the data were accepted
but a computation broke down). The CLI maps them to exit codes 2 and 3.
"""


class StructFactorError(Exception):
    """Base class for every error raised by this package."""


class InputError(StructFactorError):
    pass


class NumericError(StructFactorError):
    pass


class MissingFile(InputError, FileNotFoundError):
    pass


class ParseError(InputError):
    def __init__(self, row: int, col: int, message: str = ""):
        self.row = row
        self.col = col
        super().__init__(message or f"cannot parse cell at data row {row}, column {col}")


class RaggedRows(InputError):
    def __init__(self, row: int, expected: int, found: int):
        self.row = row
        self.expected = expected
        self.found = found
        super().__init__(f"data row {row} has {found} fields, expected {expected}")


class InvalidOrder(InputError):
    pass


class InsufficientSample(InputError):
    def __init__(self, message: str, origin: int | None = None):
        self.origin = origin
        super().__init__(message)


class RankDeficient(NumericError):
    def __init__(self, rank: int, ncols: int, series: int | None = None):
        self.rank = rank
        self.ncols = ncols
        self.series = series
        where = f" (series {series})" if series is not None else ""
        super().__init__(f"design has numerical rank {rank} < {ncols} columns{where}")


class NonFiniteInput(NumericError):
    pass


class ConvergenceFailure(NumericError):
    pass


class AllEigenvaluesFloored(NumericError):
    pass


class DomainError(NumericError):
    pass


class DegenerateSpectrum(NumericError):
    pass


class DegenerateDraw(NumericError):
    pass


class NotOrthonormal(NumericError):
    pass
