"""Exception hierarchy shared by every module.

Each error carries an ``exit_code`` so the CLI can map failures onto its
documented exit statuses without a lookup table.
"""


class IpmOtError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(IpmOtError, ValueError):
    """Invalid configuration or hyperparameter."""

    exit_code = 2


class DataError(IpmOtError, ValueError):
    """Input data violates a precondition."""

    exit_code = 3


class NumericalError(IpmOtError, ArithmeticError):
    """A computation produced a non-finite or degenerate value."""

    exit_code = 4


class NonFiniteInput(DataError):
    pass


class NegativeMass(DataError):
    pass


class NegativeWeight(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class SupportViolation(DataError):
    pass


class MassMismatch(DataError):
    pass


class EmptyClass(DataError):
    pass


class TooLarge(DataError):
    pass


class InfeasibleStart(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class RaggedRows(ParseError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class NumericalUnderflow(NumericalError):
    pass
