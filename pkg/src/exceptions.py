"""
Exception hierarchy shared by every qexodus module.
"""

from typing import List, Optional


class QexodusError(Exception):
    """Base class for all domain errors raised by qexodus"""
    pass


class InvalidModelError(QexodusError, ValueError):
    """Raised when a state space, kernel, measure, schedule or diffusion model is malformed"""
    pass


class ScheduleDegenerateError(QexodusError):
    """Raised when a survival set E_t is empty at some step"""
    pass


class StartingInBoundaryError(QexodusError):
    """Raised when the initial state or measure charges the absorbing set A_s"""
    pass


class HorizonTooDeepError(QexodusError):
    """Raised when a survival probability underflows below the representable floor"""
    pass


class ConditioningOnNullError(QexodusError):
    """Raised when conditioning on an event of (numerically) zero probability"""
    pass


class CertificateRequiredError(QexodusError):
    """Raised when an operation needs a valid minorization certificate"""
    pass


class WindowError(QexodusError):
    """Raised when a time index falls outside a tabulated window"""
    pass


class PowerIterationError(QexodusError):
    """Raised when a power iteration does not converge before its iteration cap"""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class ScheduleKindError(QexodusError):
    """Raised when an operation is called with an unsupported schedule kind"""
    pass


class AssumptionViolationError(QexodusError):
    """Raised when a structural assumption (e.g. t0 aligned with the period) does not hold"""
    pass


class ShapeError(QexodusError):
    """Raised when measures or matrices live on different state spaces"""
    pass


class DriftTooStrongError(QexodusError):
    """Raised when exp(2∫V) overflows while integrating the scale function"""

    def __init__(self, y: float):
        super().__init__(f"drift integral overflows at y={y!r}")
        self.y = y


class DomainError(QexodusError):
    """Raised when a diffusion input lies at or below its absorbing level"""
    pass


class ModelError(QexodusError):
    """Raised when a user supplied drift produces NaN values"""
    pass


class TooFewSurvivorsError(QexodusError):
    """Raised when too few Monte Carlo paths survive for a conditioned estimate"""

    def __init__(self, survivors: int, survival_fraction: float, required: int = 100):
        super().__init__(
            f"only {survivors} surviving paths (survival fraction {survival_fraction:.4g}), "
            f"at least {required} required"
        )
        self.survivors = survivors
        self.survival_fraction = survival_fraction


class EtaUnderflowError(QexodusError):
    """Raised when the η-function underflows on a surviving state"""
    pass


class ConfigError(QexodusError):
    """Raised when an experiment configuration cannot be parsed or validated"""

    def __init__(self, errors: List[str], path: Optional[str] = None):
        where = f" in {path}" if path else ""
        super().__init__(f"{len(errors)} configuration error(s){where}: " + "; ".join(errors))
        self.errors = errors
        self.path = path


class UnknownSeriesError(QexodusError):
    """Raised when a plot series id is not present in a run report"""
    pass
