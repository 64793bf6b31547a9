"""Exception hierarchy shared by all hifreq modules.

The CLI maps these onto process exit codes (input errors -> 2,
numeric failures -> 3, non-convergence -> 4).
"""


class HifreqError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(HifreqError, ValueError):
    """An argument is outside its documented range or of the wrong shape."""


class InvalidInputError(HifreqError, ValueError):
    """Input data violates a precondition (bad matrix, bad file, ...)."""


class NotPositiveSemidefiniteError(InvalidInputError):
    """A matrix that must be PSD has an eigenvalue below tolerance."""


class DegenerateGridError(InvalidInputError):
    """No usable penalty grid (all off-diagonal entries are zero)."""


class IngestError(InvalidInputError):
    """A data file failed validation; carries the offending row if known."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class NumericFailureError(HifreqError, ArithmeticError):
    """A numerical routine failed (singular system, eigensolver, ...)."""


class DegenerateVarianceError(NumericFailureError):
    """A requested entry has a nonpositive asymptotic-variance estimate."""


class DesignDegeneracyError(NumericFailureError):
    """A simulation design produced a non-factorizable covariance."""


class ConvergenceWarning(UserWarning):
    """Solver hit its iteration budget before reaching tolerance."""
