"""Exception and warning types shared across the toolkit."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class BracketError(RuntimeError):
    """A root scan failed to bracket a sign change.

    Carries the scan resolution so the caller can decide to refine.
    """

    def __init__(self, message: str, scan_points: int | None = None):
        super().__init__(message)
        self.scan_points = scan_points


class ContinuationError(RuntimeError):
    """Branch continuation stalled: Newton failed below the minimum step."""

    def __init__(self, message: str, last_beta: float | None = None):
        super().__init__(message)
        self.last_beta = last_beta


class NoClosedFormError(ValueError):
    """The requested quantity has no closed form in this parameter range."""


class NoProjectionError(RuntimeError):
    """The pair cannot be projected onto the two-constraint set
    (for beta < 0 this signals the components overlap too strongly)."""


class AdmissibilityError(ValueError):
    """A linear potential lies outside (-lambda_1(domain), 0)."""


class NonConvergenceError(RuntimeError):
    """Iteration budget exhausted before tolerances were met."""

    def __init__(self, message: str, iterations: int | None = None,
                 residual: float | None = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class DomainClampWarning(UserWarning):
    """An input within 1e-14 of a domain endpoint was clamped to it."""


class TailTruncationWarning(UserWarning):
    """Estimated quadrature tail beyond the grid exceeds the tolerance."""


class ThresholdViolationWarning(UserWarning):
    """A computed energy exceeds a theoretical upper threshold by more than
    the tolerance; usually indicates an under-resolved grid."""
