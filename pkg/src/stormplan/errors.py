"""Exception types shared across the package."""


class StormPlanError(Exception):
    """Base class for all package errors."""


class InputError(StormPlanError, ValueError):
    """Invalid or inconsistent input data."""


class OutOfRangeError(InputError):
    pass


class MissingDataError(InputError):
    pass


class FeederError(InputError):
    """Raised by feeder validation; ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid feeder: " + "; ".join(self.violations))


class ScenarioShortfallError(InputError):
    def __init__(self, wanted, available):
        self.wanted = wanted
        self.available = available
        super().__init__(
            f"requested {wanted} distinct scenarios but only {available} were sampled "
            f"(shortfall {wanted - available})"
        )


class InfeasibleModelError(StormPlanError):
    pass


class SolverLimitError(StormPlanError):
    pass


class NumericalError(StormPlanError):
    pass
