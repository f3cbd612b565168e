"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`VusError`,
so callers (the CLI in particular) can separate data problems from numerical
failures without catching bare ``Exception``.
"""


class VusError(Exception):
    """Base class for all package errors."""


class DataError(VusError):
    """Input data violates a structural precondition."""


class NumericalError(VusError):
    """A fit or a linear solve failed numerically."""


class ZeroDenominator(NumericalError):
    pass


class MissingClassAmongVerified(DataError):
    pass


class RankDeficientDesign(DataError):
    pass


class UnverifiedSubject(DataError):
    pass


class InvalidDiseaseIndicators(DataError):
    pass


class NonConvergence(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateDenominator(NumericalError):
    pass


class NonPositivePi(NumericalError):
    pass


class SingularInformation(NumericalError):
    pass


class ZeroClassPrevalence(NumericalError):
    pass


class TooFewSuccessfulResamples(NumericalError):
    def __init__(self, message, n_ok=0, n_failed=0):
        super().__init__(message)
        self.n_ok = n_ok
        self.n_failed = n_failed


class AllCovariatesDropped(UserWarning):
    """Warning: backward selection removed every disease-model covariate."""
