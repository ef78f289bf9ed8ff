"""Exception taxonomy shared by all dsch modules.

Contract violations (bad arguments, mismatched shapes, malformed files)
are ValueError subclasses and map to CLI exit code 2.  Numeric failures
(non-PSD covariances, diverged training) are ArithmeticError subclasses
and map to exit code 3.
"""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class ShapeError(ContractError):
    """Operand shapes are incompatible; message names both shapes."""


class DegenerateInputError(ContractError):
    """Input is degenerate for the requested operation (e.g. zero norm)."""


class FormatError(ContractError):
    """A file does not conform to its declared format.

    Carries the offending path and, when known, the byte offset at which
    parsing failed.
    """

    def __init__(self, message, path=None, offset=None):
        detail = message
        if path is not None:
            detail += f" (file: {path}"
            if offset is not None:
                detail += f", byte offset {offset}"
            detail += ")"
        super().__init__(detail)
        self.path = path
        self.offset = offset


class NumericError(ArithmeticError):
    """A numeric procedure failed beyond recoverable regularization."""


class NonPSDError(NumericError):
    """Cholesky factorization failed even after ridge regularization.

    ``index`` is the diagonal position at which the factorization broke
    down (the first non-positive pivot).
    """

    def __init__(self, message, index):
        super().__init__(f"{message} (failing diagonal index {index})")
        self.index = index


class TrainingDivergedError(NumericError):
    """Training loss became non-finite or exceeded the divergence bound."""

    def __init__(self, message, epoch=None, batch_indices=None, loss=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_indices = batch_indices
        self.loss = loss
