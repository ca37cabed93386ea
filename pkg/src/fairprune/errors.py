"""Exception hierarchy.

`DataError` subclasses describe problems with inputs read from disk or with
dataset contents; `InvalidInput` subclasses are argument contract violations
of the library functions. The CLI maps the former to exit code 2 and
`InvariantViolation` to exit code 3.
"""


class FairPruneError(Exception):
    pass


class DataError(FairPruneError):
    pass


class InvalidInput(FairPruneError, ValueError):
    pass


class InvariantViolation(FairPruneError):
    pass


class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"missing column: {column!r}")
        self.column = column


class UnparseableValue(DataError):
    def __init__(self, row, column, value=None):
        msg = f"cannot parse value {value!r} at row {row}, column {column!r}"
        super().__init__(msg)
        self.row = row
        self.column = column
        self.value = value


class EmptyFile(DataError):
    pass


class NoSensitiveAttributes(DataError):
    pass


class DegenerateAttribute(DataError):
    pass


class TooFewRows(DataError):
    pass


class FingerprintMismatch(DataError):
    pass


class LengthMismatch(InvalidInput):
    pass


class ShapeMismatch(InvalidInput):
    pass


class NonBinaryTask(InvalidInput):
    pass


class ConstantVector(InvalidInput):
    pass


class EmptyProfile(InvalidInput):
    pass


class AllZeroWeights(InvalidInput):
    pass


class InvalidDelta(InvalidInput):
    pass


class NegativeKL(InvalidInput):
    pass


class NotADistribution(InvalidInput):
    pass


class DivergentSupport(InvalidInput):
    pass


class AsymmetricMatrix(InvalidInput):
    pass


class InvalidLambda(InvalidInput):
    pass


class EmptySelector(InvalidInput):
    pass


class NoUsefulWeakLearner(FairPruneError):
    pass
