"""Age-stratified SEITPHR epidemic dynamics and policy optimization.

Simulates an eleven-compartment, age-structured epidemic model under
weekly testing and social-distancing controls, and computes open-loop and
receding-horizon policies that respect hard ICU-capacity and
testing-capacity limits.
"""

__version__ = "0.1.0"

from ._kernel import backend as kernel_backend
from .errors import (BracketError, CalibrationError, ConfigError,
                     DimensionError, IntegrationBlowupError,
                     OcpInfeasibleError, OcpNonconvergenceError,
                     RateDomainError, RecursiveFeasibilityError, SeitphrError,
                     SingularTransitionError, StateValidationError)
from .model import (AgeGroupState, ControlInput, ModelParameters,
                    StateDiagnostics, StateVector, aggregate_icu, rhs,
                    total_tests, validate_state)
from .mpc import MpcConfig, MpcResult, run_mpc
from .ocp import (ConstraintActivity, OcpSolution, OcpSpec, derive_beta_min,
                  objective_j1, objective_j2, objective_j3, solve_ocp)
from .parameters import (CalibrationSpec, ContactMatrix,
                         calibrate_transmission, default_parameters,
                         homogeneous_parameters, initial_state,
                         mean_contact_rate, median_to_mean_rate)
from .simulator import (PiecewisePolicy, Trajectory, herd_immunity_time,
                        ngm_reproduction_number, simulate, sir_reference)

__all__ = [
    "AgeGroupState", "BracketError", "CalibrationError", "CalibrationSpec",
    "ConfigError", "ConstraintActivity", "ContactMatrix", "ControlInput",
    "DimensionError", "IntegrationBlowupError", "ModelParameters",
    "MpcConfig", "MpcResult", "OcpInfeasibleError", "OcpNonconvergenceError",
    "OcpSolution", "OcpSpec", "PiecewisePolicy", "RateDomainError",
    "RecursiveFeasibilityError", "SeitphrError", "SingularTransitionError",
    "StateDiagnostics", "StateValidationError", "StateVector", "Trajectory",
    "aggregate_icu", "calibrate_transmission", "default_parameters",
    "derive_beta_min", "herd_immunity_time", "homogeneous_parameters",
    "initial_state", "kernel_backend", "mean_contact_rate",
    "median_to_mean_rate", "ngm_reproduction_number", "objective_j1",
    "objective_j2", "objective_j3", "rhs", "run_mpc", "simulate",
    "sir_reference", "solve_ocp", "total_tests", "validate_state",
]
