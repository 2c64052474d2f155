"""Exception types shared across the package."""


class StealthyLabError(Exception):
    """Base class for all errors raised by stealthy_lab."""


class DimensionError(StealthyLabError, ValueError):
    pass


class NotStealthyError(StealthyLabError, ValueError):
    pass


class PreconditionError(StealthyLabError, ValueError):
    pass


class ConvergenceError(StealthyLabError, RuntimeError):
    """Minimization stalled above tolerance; ``best_energy`` holds the best value seen."""

    def __init__(self, message, best_energy=None, best=None):
        super().__init__(message)
        self.best_energy = best_energy
        self.best = best


class EstimatorError(StealthyLabError, ValueError):
    pass


class ConstructionError(StealthyLabError, RuntimeError):
    pass


class SupportError(StealthyLabError, ValueError):
    pass


class CertificateError(StealthyLabError, ValueError):
    pass


class RankDeficiencyError(StealthyLabError, ValueError):
    pass


class PrecisionError(StealthyLabError, RuntimeError):
    pass


class InversionError(StealthyLabError, RuntimeError):
    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class ResolutionError(StealthyLabError, ValueError):
    pass


class ConditioningWarning(UserWarning):
    pass


class IllPosedWarning(UserWarning):
    pass
