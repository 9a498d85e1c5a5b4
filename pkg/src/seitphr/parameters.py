"""Default parameter set, calibration helpers, and initial states.

The shipped defaults encode a German three-group setting: population shares
from end-2019 census data, a physical-contact structure calibrated to a
basic reproduction number of 2.5, severity splits from reported case data,
and capacity limits of 10,000 ICU beds and 1,200,000 tests per week.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, RateDomainError, StateValidationError
from .model import IA, IM, IS, E, N_COMP, S, ModelParameters, StateVector

#: Group shares: under 15, 15-59, 60+.
GROUP_SHARES = (0.14, 0.58, 0.28)

#: Nominal transmission-rate matrix (contacts/day scaled by the
#: per-contact transmission probability), symmetric.
BETA0 = (
    (0.46, 0.48, 0.12),
    (0.48, 0.63, 0.29),
    (0.12, 0.29, 0.18),
)

#: Severity splits per group as published: rows (severe, mild, asymptomatic),
#: columns age groups. Column sums carry rounding error up to 1e-4; the
#: constructor renormalizes each column so the flow balance is exact.
SEVERITY_SPLITS = (
    (0.0053, 0.0031, 0.0302),
    (0.1211, 0.2201, 0.2512),
    (0.8737, 0.7768, 0.7186),
)

GAMMA = 0.19            # 1 / mean incubation time
ETA_S = 0.25            # severe: symptom onset + physician visit
ETA_M = 0.25            # mild: same presentation delay
ETA_A = 0.17            # asymptomatic: unreported recovery after ~6 days
TAU_S = 0.5 + ETA_S     # tested severe: result delay or physician visit
TAU_O = ETA_M + ETA_A + 0.5  # tested other: recovery, result, or visit

DEFAULT_N_POP = 83.1e6
DEFAULT_H_ICU_MAX = 10_000.0
DEFAULT_T_MAX = 1_200_000.0 / 7.0
DEFAULT_E0 = 1672.0
DEFAULT_I0 = 524.0


@dataclass(frozen=True)
class ContactMatrix:
    """Mean daily physical contacts between age groups."""

    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise StateValidationError("contact matrix must be square")
        if np.any(c < 0):
            raise StateValidationError("contact entries must be nonnegative")
        c.flags.writeable = False
        object.__setattr__(self, "c", c)


@dataclass(frozen=True)
class CalibrationSpec:
    """Target basic reproduction number and mean infectious period (days)."""

    r0: float
    eta_inv: float

    def __post_init__(self):
        if self.r0 < 0:
            raise StateValidationError("r0 must be nonnegative")
        if self.eta_inv <= 0:
            raise StateValidationError("eta_inv must be positive")


def median_to_mean_rate(median_days: float, offset_days: float = 0.0) -> float:
    """Rate whose mean stay is the exponential-median conversion minus offset.

    The median of an Exp(rate) stay is ``log 2 / rate``; a median observed
    from symptom onset is shifted by ``offset_days`` spent before entering
    the compartment.
    """
    mean = median_days / math.log(2.0) - offset_days
    if mean <= 0:
        raise RateDomainError(
            f"median {median_days} d with offset {offset_days} d gives "
            f"nonpositive mean stay {mean:.3f} d")
    return 1.0 / mean


# Pre-ICU stay: 9-day median from symptom onset minus the 2 days already
# spent infectious before isolation (mean ~10.98 days).
RHO = median_to_mean_rate(9.0, 2.0)
# ICU stay: 13-day / 2-day medians mixed 24:26 give a mean of ~10.5 days.
SIGMA = 1.0 / 10.5


def calibrate_transmission(contacts: ContactMatrix, shares,
                           spec: CalibrationSpec):
    """Scale a contact matrix so the implied reproduction number hits ``r0``.

    Returns ``(alpha, beta0)`` where ``alpha`` is the per-contact
    transmission probability-rate and ``beta0 = alpha * c``. The population
    average ``sum_ij N_i N_j beta0_ij * eta_inv`` then equals ``r0`` exactly.
    """
    n = np.asarray(shares, dtype=float)
    c = contacts.c
    if c.shape != (n.size, n.size):
        raise StateValidationError("contact matrix does not match shares")
    if abs(n.sum() - 1.0) > 1e-9:
        raise StateValidationError("group shares must sum to 1")
    weighted = float(np.einsum("i,j,ij->", n, n, c))
    if weighted <= 0.0:
        raise CalibrationError("contact matrix has no weighted mass")
    alpha = spec.r0 / (spec.eta_inv * weighted)
    return alpha, alpha * c


def default_parameters(n_pop: float = DEFAULT_N_POP,
                       h_icu_max: float = DEFAULT_H_ICU_MAX,
                       t_max: float = DEFAULT_T_MAX) -> ModelParameters:
    """The shipped German three-group parameter set."""
    pi = np.array(SEVERITY_SPLITS, dtype=float)
    pi = pi / pi.sum(axis=0, keepdims=True)
    return ModelParameters(
        n_g=3,
        N=np.array(GROUP_SHARES),
        beta0=np.array(BETA0),
        gamma=GAMMA,
        pi_s=pi[0],
        pi_m=pi[1],
        pi_a=pi[2],
        eta_s=ETA_S,
        eta_m=ETA_M,
        eta_a=ETA_A,
        tau_s=TAU_S,
        tau_o=TAU_O,
        rho=RHO,
        sigma=SIGMA,
        n_pop=n_pop,
        h_icu_max=h_icu_max,
        t_max=t_max,
    )


def mean_contact_rate(p: ModelParameters, beta=None) -> float:
    """Population-averaged contact rate ``sum_ij N_i N_j beta_ij``."""
    b = p.beta0 if beta is None else np.asarray(beta, dtype=float)
    return float(np.einsum("i,j,ij->", p.N, p.N, b))


def homogeneous_parameters(p: ModelParameters) -> ModelParameters:
    """Single-group parameter set matching the population aggregates.

    The scalar contact rate is the population average of ``beta0`` and the
    severity split is the share-weighted mean, so the one-group model sees
    the same per-person contact load and case-mix as the stratified one.
    """
    pis = float(p.pi_s @ p.N)
    pim = float(p.pi_m @ p.N)
    pia = float(p.pi_a @ p.N)
    return ModelParameters(
        n_g=1,
        N=np.array([1.0]),
        beta0=np.array([[mean_contact_rate(p)]]),
        gamma=p.gamma,
        pi_s=np.array([pis]),
        pi_m=np.array([pim]),
        pi_a=np.array([pia]),
        eta_s=p.eta_s, eta_m=p.eta_m, eta_a=p.eta_a,
        tau_s=p.tau_s, tau_o=p.tau_o, rho=p.rho, sigma=p.sigma,
        n_pop=p.n_pop, h_icu_max=p.h_icu_max, t_max=p.t_max,
    )


def initial_state(p: ModelParameters, e0_total: float = DEFAULT_E0,
                  i0_total: float = DEFAULT_I0) -> StateVector:
    """Outbreak seed state: latent and infectious head counts spread by age.

    Both totals are distributed across groups proportionally to ``N`` and
    the infectious mass is split across severity classes by each group's
    severity probabilities, matching the inflow ratios of the dynamics.
    Everything else starts susceptible.
    """
    if e0_total < 0 or i0_total < 0:
        raise StateValidationError("seed counts must be nonnegative")
    if e0_total + i0_total >= p.n_pop:
        raise StateValidationError("seed counts exceed the population")
    data = np.zeros((p.n_g, N_COMP))
    data[:, E] = p.N * (e0_total / p.n_pop)
    infectious = p.N * (i0_total / p.n_pop)
    data[:, IS] = infectious * p.pi_s
    data[:, IM] = infectious * p.pi_m
    data[:, IA] = infectious * p.pi_a
    data[:, S] = p.N - data[:, E] - data[:, IS] - data[:, IM] - data[:, IA]
    return StateVector(data)
