"""Exception hierarchy shared across the package."""


class SfaTailError(Exception):
    """Base class for all package errors."""


class DegenerateTail(SfaTailError, ValueError):
    """The retained tail has zero range, so self-normalization is undefined."""


class QuadratureFailure(SfaTailError, ArithmeticError):
    """Adaptive quadrature could not reach tolerance within its subdivision budget."""


class CalibrationMismatch(SfaTailError, ValueError):
    """A calibration artifact does not match the requested test (kind or k)."""


class CalibrationDivergence(SfaTailError, ArithmeticError):
    """Least-favorable calibration ended with the size constraint still violated."""


class MissingCalibration(SfaTailError, LookupError):
    def __init__(self, kind, k, alpha):
        self.kind, self.k, self.alpha = kind, k, alpha
        super().__init__(f"no calibration for kind={kind}, k={k}, alpha={alpha}")


class RankDeficient(SfaTailError, ArithmeticError):
    """Design matrix is numerically rank deficient."""


class ZeroVariance(SfaTailError, ArithmeticError):
    """Residual variance is zero."""
