"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its contract."""


class ConfigurationError(ValueError):
    """A scenario, plan, or numerical configuration is invalid.

    ``field`` names the offending configuration entry when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DegenerateQuotientError(ArithmeticError):
    """A ratio was requested whose denominator vanishes."""


class ConjugateDivergenceError(ArithmeticError):
    """The numerical conjugate did not saturate within the radius schedule."""


class StepRejected(RuntimeError):
    """A density step produced an invalid state; retry with ``suggested_dt``."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class WindowContractionError(RuntimeError):
    """The Picard map failed to contract on a window even after halving."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class EquiIntegrabilityError(ValueError):
    """Threshold selection failed; ``report`` holds the diagnostic record."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
