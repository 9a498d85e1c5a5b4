"""State, control, and parameter types plus the compartment vector field.

Population shares are tracked for eleven compartments per age group:
susceptible (S), latent (E), infectious with severe/mild/asymptomatic
course (IS, IM, IA), tested-but-undetected severe/other (TS, TO), pre-ICU
isolation (P), intensive care (HICU), and unreported/reported removed
(RU, RK). A valid state lives on the unit simplex over all ``11 * n_g``
entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernel
from .errors import DimensionError, StateValidationError

COMPARTMENTS = ("S", "E", "IS", "IM", "IA", "TS", "TO", "P", "HICU", "RU", "RK")
N_COMP = len(COMPARTMENTS)
S, E, IS, IM, IA, TS, TO, P, HICU, RU, RK = range(N_COMP)

#: Compartments counted as infectious for the force of infection.
INFECTIOUS = (IS, IM, IA, TS, TO)
#: Compartments making up the undetected pool U eligible for random testing.
UNDETECTED = (S, E, IS, IM, IA, RU)

NEG_TOL = 1e-12
SUM_TOL = 1e-9


def _frozen(a, shape=None, dtype=float):
    out = np.array(a, dtype=dtype)
    if shape is not None and out.shape != shape:
        raise DimensionError(f"expected shape {shape}, got {out.shape}")
    out.flags.writeable = False
    return out


class AgeGroupState(NamedTuple):
    """The eleven compartment shares of a single age group."""

    s: float
    e: float
    i_s: float
    i_m: float
    i_a: float
    t_s: float
    t_o: float
    p_pre: float
    h_icu: float
    r_u: float
    r_k: float


@dataclass(frozen=True)
class StateVector:
    """Plain container for population shares, shape ``(n_g, 11)``.

    Construction freezes the underlying array; use :func:`validate_state`
    (or :meth:`validate`) to check simplex membership and nonnegativity.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != N_COMP:
            raise DimensionError(
                f"state must have shape (n_g, {N_COMP}), got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def n_g(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_flat(cls, flat, n_g) -> "StateVector":
        return cls(np.asarray(flat, dtype=float).reshape(n_g, N_COMP))

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def group(self, i) -> AgeGroupState:
        return AgeGroupState(*self.data[i])

    def compartment(self, c) -> np.ndarray:
        """Series of one compartment across groups; accepts index or name."""
        if isinstance(c, str):
            c = COMPARTMENTS.index(c)
        return self.data[:, c]

    def total(self) -> float:
        return float(self.data.sum())

    def validate(self, neg_tol=NEG_TOL, sum_tol=SUM_TOL) -> "StateDiagnostics":
        return validate_state(self, neg_tol=neg_tol, sum_tol=sum_tol)


@dataclass(frozen=True)
class ControlInput:
    """One control interval's contact matrix and per-group testing rates."""

    beta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        theta = np.atleast_1d(np.array(self.theta, dtype=float))
        if beta.ndim != 2 or beta.shape[0] != beta.shape[1]:
            raise DimensionError(f"beta must be square, got {beta.shape}")
        if theta.shape != (beta.shape[0],):
            raise DimensionError(
                f"theta shape {theta.shape} does not match beta {beta.shape}")
        beta.flags.writeable = False
        theta.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)

    @property
    def n_g(self) -> int:
        return self.theta.shape[0]

    def check(self, p: "ModelParameters", symmetric=False, tol=1e-9) -> None:
        """Raise unless the control respects its box bounds (and symmetry)."""
        if self.n_g != p.n_g:
            raise DimensionError("control dimension does not match parameters")
        if np.any(self.theta < -tol):
            raise StateValidationError("negative testing rate")
        if np.any(self.beta < -tol) or np.any(self.beta > p.beta0 + tol):
            raise StateValidationError("contact rates outside [0, beta0]")
        if symmetric and not np.allclose(self.beta, self.beta.T, atol=tol):
            raise StateValidationError("contact matrix not symmetric")


@dataclass(frozen=True)
class ModelParameters:
    """Epidemiological constants plus population and capacity scales.

    Rates are per day, ``N`` are group shares summing to one, ``beta0`` is
    the nominal (no countermeasures) transmission-rate matrix. ``n_pop``,
    ``h_icu_max`` and ``t_max`` are absolute head counts used to convert
    shares into reported quantities and constraint levels.
    """

    n_g: int
    N: np.ndarray
    beta0: np.ndarray
    gamma: float
    pi_s: np.ndarray
    pi_m: np.ndarray
    pi_a: np.ndarray
    eta_s: float
    eta_m: float
    eta_a: float
    tau_s: float
    tau_o: float
    rho: float
    sigma: float
    n_pop: float
    h_icu_max: float
    t_max: float

    def __post_init__(self):
        ng = self.n_g
        object.__setattr__(self, "N", _frozen(self.N, (ng,)))
        object.__setattr__(self, "beta0", _frozen(self.beta0, (ng, ng)))
        for name in ("pi_s", "pi_m", "pi_a"):
            object.__setattr__(self, name, _frozen(getattr(self, name), (ng,)))
        if abs(self.N.sum() - 1.0) > 1e-9:
            raise StateValidationError("group shares N must sum to 1")
        pis = self.pi_s + self.pi_m + self.pi_a
        if np.any(np.abs(pis - 1.0) > 1e-9):
            raise StateValidationError("severity splits must sum to 1 per group")
        rates = [self.gamma, self.eta_s, self.eta_m, self.eta_a,
                 self.tau_s, self.tau_o, self.rho, self.sigma]
        if any(r < 0 for r in rates) or np.any(self.beta0 < 0):
            raise StateValidationError("rates and beta0 must be nonnegative")
        if np.any(self.pi_s < 0) or np.any(self.pi_m < 0) or np.any(self.pi_a < 0):
            raise StateValidationError("severity splits must be nonnegative")

    def nominal_control(self) -> ControlInput:
        """No countermeasures: full contacts, no random testing."""
        return ControlInput(self.beta0, np.zeros(self.n_g))

    def kernel_args(self):
        """Parameter tuple in the layout the integration kernels expect."""
        return (self.pi_s, self.pi_m, self.pi_a, self.gamma,
                self.eta_s, self.eta_m, self.eta_a,
                self.tau_s, self.tau_o, self.rho, self.sigma)


@dataclass(frozen=True)
class Violation:
    kind: str
    group: int
    compartment: str
    magnitude: float

    def __str__(self):
        where = (f"group {self.group} {self.compartment}"
                 if self.compartment else "state sum")
        return f"{self.kind} at {where}: magnitude {self.magnitude:.3e}"


@dataclass(frozen=True)
class StateDiagnostics:
    """Invariant-violation report; empty ``violations`` means a clean state."""

    violations: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "state ok"
        return "; ".join(str(v) for v in self.violations)


def _check_dims(x: StateVector, u: ControlInput, p: ModelParameters):
    if not (x.n_g == u.n_g == p.n_g):
        raise DimensionError(
            f"dimension mismatch: state {x.n_g}, control {u.n_g}, "
            f"parameters {p.n_g} groups")


def rhs(x: StateVector, u: ControlInput, p: ModelParameters,
        validate=True) -> np.ndarray:
    """Time derivative of the compartment shares, shape ``(n_g, 11)``.

    The force of infection on group i is
    ``sum_j beta[i, j] * S_i * (IS_j + IM_j + IA_j + TS_j + TO_j)``; all other
    flows are linear. The derivative components sum to zero, so the simplex
    is invariant.
    """
    _check_dims(x, u, p)
    if validate:
        diag = validate_state(x)
        if not diag.ok:
            raise StateValidationError(str(diag))
        u.check(p)
    flat = _kernel.rhs(np.ascontiguousarray(x.flat()),
                       np.ascontiguousarray(u.beta.reshape(-1)),
                       np.ascontiguousarray(u.theta),
                       *p.kernel_args())
    return np.asarray(flat).reshape(x.n_g, N_COMP)


def undetected_pool(x: StateVector) -> np.ndarray:
    """Per-group share of people eligible for random testing (the pool U)."""
    return x.data[:, list(UNDETECTED)].sum(axis=1)


def total_tests(x: StateVector, theta, p: ModelParameters) -> float:
    """Absolute tests administered per day at the given state.

    Random tests run at rate ``theta_i`` over the undetected pool; severe
    and mild symptomatic cases are additionally tested on presentation.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (p.n_g,) or x.n_g != p.n_g:
        raise DimensionError("theta/state dimensions do not match parameters")
    if np.any(theta < 0):
        raise StateValidationError("negative testing rate")
    symptomatic = p.eta_s * x.data[:, IS] + p.eta_m * x.data[:, IM]
    return float(p.n_pop * np.sum(theta * undetected_pool(x) + symptomatic))


def aggregate_icu(x: StateVector, p: ModelParameters) -> float:
    """Absolute ICU occupancy implied by the state."""
    if x.n_g != p.n_g:
        raise DimensionError("state dimension does not match parameters")
    return float(p.n_pop * x.data[:, HICU].sum())


def validate_state(x: StateVector, neg_tol=NEG_TOL, sum_tol=SUM_TOL,
                   upper_tol=NEG_TOL) -> StateDiagnostics:
    """Report every invariant violation of a state with its magnitude."""
    found = []
    data = x.data
    for g in range(x.n_g):
        for c in range(N_COMP):
            v = data[g, c]
            if v < -neg_tol:
                found.append(Violation("negativity", g, COMPARTMENTS[c], -v))
            elif v > 1.0 + upper_tol:
                found.append(Violation("exceeds-one", g, COMPARTMENTS[c], v - 1.0))
    total = float(data.sum())
    if abs(total - 1.0) > sum_tol:
        found.append(Violation("simplex", -1, "", abs(total - 1.0)))
    return StateDiagnostics(tuple(found))
