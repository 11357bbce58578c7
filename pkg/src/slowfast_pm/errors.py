"""Exception hierarchy shared by all modules."""


class SlowFastError(Exception):
    """Base class for every error raised by the package."""


class DomainError(SlowFastError, ValueError):
    """State or parameter outside the domain of an evaluator."""


class ConfigurationError(SlowFastError, ValueError):
    """Inconsistent or missing configuration."""


class IntegrationBlowupError(SlowFastError, FloatingPointError):
    """A trajectory produced a non-finite state."""

    def __init__(self, step, trajectory_index=None, msg=None):
        self.step = int(step)
        self.trajectory_index = trajectory_index
        where = f"step {self.step}"
        if trajectory_index is not None:
            where += f" of trajectory {trajectory_index}"
        super().__init__(msg or f"non-finite state at {where}")


class DegenerateMeasureError(SlowFastError, ArithmeticError):
    """A functional of an empirical measure is undefined (e.g. zero denominator)."""


class UnreliableWeightsError(SlowFastError, RuntimeError):
    """Importance weights collapsed below the effective-sample-size gate."""

    def __init__(self, ess, gate, msg=None, report=None):
        self.ess = float(ess)
        self.gate = float(gate)
        self.report = report
        super().__init__(msg or f"effective sample size {self.ess:.1f} below gate {self.gate:g}")
