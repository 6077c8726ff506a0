"""Exception types shared across the package."""


class QeffError(Exception):
    """Base class for all package errors."""


class InvalidInputError(QeffError, ValueError):
    pass


class DegenerateWeightsError(QeffError):
    """The two qubit states produce identical mean signals."""


class SingularSystemError(QeffError):
    pass


class FitFailure(QeffError):
    """A fit did not converge or is underdetermined.

    ``diagnostics`` carries whatever the fitter knew at the time of failure
    (iteration counts, residuals, ...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
