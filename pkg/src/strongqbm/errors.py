"""Exception hierarchy shared by every stage of the pipeline."""


class QBMError(Exception):
    """Base class for all package errors."""


class ConfigError(QBMError):
    """A run configuration failed validation.

    ``diagnostics`` is a single message or a list of them.
    """

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class NumericalError(QBMError):
    """A numerical stage could not produce a trustworthy result."""


class SymbolicKernelError(NumericalError, ValueError):
    """A delta-function kernel was asked for pointwise samples."""


class QuadratureError(NumericalError):
    """An integral did not reach the requested tolerance."""

    def __init__(self, message, error_estimate=None):
        self.error_estimate = error_estimate
        if error_estimate is not None:
            message = f"{message} (achieved error estimate {error_estimate:.3g})"
        super().__init__(message)


class StepSizeError(NumericalError, ValueError):
    """The time step is too coarse for the model's fastest scale."""


class GridError(NumericalError, ValueError):
    """A time argument does not lie on the uniform grid."""


class SingularPropagatorError(NumericalError):
    """The homogeneous propagator is (numerically) singular."""

    def __init__(self, time, condition):
        self.time = time
        self.condition = condition
        super().__init__(
            f"propagator is near-singular at t={time:.6g} (condition number {condition:.3g})"
        )


class ConvergenceError(NumericalError):
    """An iterative or extrapolated solve failed its self-consistency check."""


class DegreeOverflowError(QBMError, ValueError):
    """A phase-space operator exceeded the configured total-degree cap."""


class StabilityError(NumericalError):
    """An explicit integrator violated its stability bound or blew up."""


class CovarianceError(NumericalError):
    """A covariance matrix is indefinite beyond the allowed jitter."""
