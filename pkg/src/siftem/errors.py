"""Exception hierarchy shared by all modules."""


class TemError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(TemError, ValueError):
    """Invalid encoder / experiment configuration (e.g. bias not above amplitude)."""


class ScheduleRangeError(TemError, ValueError):
    """A time falls outside the span covered by a mismatch schedule."""


class QuadratureError(TemError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


class InfeasibleCalibrationError(TemError, ValueError):
    """No calibration threshold satisfies the non-sampling budget."""


class SingularCalibrationError(TemError, ValueError):
    """The two injection levels coincide (alpha == 1)."""


class IllConditionedError(TemError, ArithmeticError):
    """The 2x2 calibration system is numerically singular."""


class ImplausibleEstimateError(TemError, ValueError):
    """Calibration produced a non-positive scaling or a negative discharge time."""

    def __init__(self, sigma_hat: float, delta_dis_hat: float):
        self.sigma_hat = sigma_hat
        self.delta_dis_hat = delta_dis_hat
        super().__init__(
            f"implausible estimate: sigma_hat={sigma_hat!r}, delta_dis_hat={delta_dis_hat!r}"
        )


class NoHeadroomError(TemError, ValueError):
    """The discharge-only configuration already violates the recovery condition."""


class TuningError(TemError, ValueError):
    """The requested recovery-condition target cannot be reached."""


class SolverError(TemError, ArithmeticError):
    """Linear solve failed; usually fixed by a positive ridge."""


class UndefinedNMSEError(TemError, ValueError):
    """Reference signal has zero energy on the scoring window."""
