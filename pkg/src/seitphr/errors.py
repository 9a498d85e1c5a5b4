"""Exception types shared across the package."""


class SeitphrError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(SeitphrError):
    """Structural mismatch between state, control, or parameter shapes."""


class StateValidationError(SeitphrError):
    """A state, control, or parameter set violates its invariants."""


class IntegrationBlowupError(SeitphrError):
    """The integrated state left the admissible simplex beyond tolerance.

    Carries the offending time, age group, and compartment so step-size
    problems are diagnosable instead of silently clipped.
    """

    def __init__(self, time_days, group, compartment, value, kind):
        self.time_days = time_days
        self.group = group
        self.compartment = compartment
        self.value = value
        self.kind = kind
        super().__init__(
            f"state left admissible region at t={time_days:g} d "
            f"({kind}: group {group}, compartment {compartment}, value {value:.3e})"
        )


class CalibrationError(SeitphrError):
    """Degenerate calibration input (e.g. an all-zero contact matrix)."""


class RateDomainError(SeitphrError):
    """A median-to-mean conversion produced a nonpositive mean stay."""


class SingularTransitionError(SeitphrError):
    """The linear transition matrix of the infected block is singular."""


class OcpInfeasibleError(SeitphrError):
    """No feasible point found for an optimal control problem."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class OcpNonconvergenceError(SeitphrError):
    """The NLP solver exhausted its iteration budget without converging."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics
        super().__init__(message)


class RecursiveFeasibilityError(SeitphrError):
    """An MPC step's finite-horizon problem became infeasible.

    ``step_index`` is the control interval at which feasibility was lost;
    ``partial_result`` holds everything applied up to that point.
    """

    def __init__(self, step_index, cause, partial_result=None):
        self.step_index = step_index
        self.cause = cause
        self.partial_result = partial_result
        super().__init__(
            f"finite-horizon problem infeasible at MPC step {step_index}: {cause}"
        )


class BracketError(SeitphrError):
    """A bisection bracket does not straddle the feasibility boundary."""


class ConfigError(SeitphrError):
    """Malformed or unknown configuration input."""
