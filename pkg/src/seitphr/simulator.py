"""Trajectory integration and epidemiological diagnostics.

Policies are weekly-indexed sequences of controls held constant over each
interval; integration is classical fixed-step RK4 through the selected
kernel backend. Besides the raw compartment paths, trajectories carry the
absolute ICU occupancy, the daily test count, and the next-generation-matrix
reproduction number evaluated as if all countermeasures were lifted (the
herd-immunity criterion).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernel
from .errors import (DimensionError, IntegrationBlowupError,
                     SingularTransitionError, StateValidationError)
from .model import (COMPARTMENTS, HICU, IA, IM, IS, N_COMP, TO, TS,
                    ControlInput, ModelParameters, StateVector, total_tests,
                    validate_state)

#: Infected compartments entering the next-generation matrix, per group.
#: P and HICU are excluded: both are isolated and no longer transmit.
NGM_CLASSES = (1, 2, 3, 4, 5, 6)  # E, IS, IM, IA, TS, TO


@dataclass(frozen=True)
class PiecewisePolicy:
    """Controls held constant over consecutive intervals (default weekly)."""

    controls: tuple
    interval_days: float = 7.0

    def __post_init__(self):
        if self.interval_days <= 0:
            raise StateValidationError("interval_days must be positive")
        controls = tuple(self.controls)
        if not controls:
            raise StateValidationError("policy needs at least one control")
        ng = controls[0].n_g
        if any(c.n_g != ng for c in controls):
            raise DimensionError("controls have inconsistent dimensions")
        object.__setattr__(self, "controls", controls)

    @property
    def n_intervals(self) -> int:
        return len(self.controls)

    @property
    def n_g(self) -> int:
        return self.controls[0].n_g

    def control_at(self, t_days: float) -> ControlInput:
        """Control active at time t; the last one is held past the end."""
        idx = min(int(t_days // self.interval_days), len(self.controls) - 1)
        return self.controls[idx]

    @classmethod
    def constant(cls, control: ControlInput, n_intervals: int = 1,
                 interval_days: float = 7.0) -> "PiecewisePolicy":
        return cls((control,) * n_intervals, interval_days)

    @classmethod
    def from_arrays(cls, betas, thetas, interval_days: float = 7.0
                    ) -> "PiecewisePolicy":
        controls = tuple(ControlInput(b, t) for b, t in zip(betas, thetas))
        return cls(controls, interval_days)

    def stacked(self):
        """(betas, thetas) stacked along the interval axis."""
        betas = np.stack([c.beta for c in self.controls])
        thetas = np.stack([c.theta for c in self.controls])
        return betas, thetas


@dataclass(frozen=True)
class Trajectory:
    """Sampled state path with derived series on a shared time grid."""

    times: np.ndarray            # days, shape (n_t,)
    states: np.ndarray           # shares, shape (n_t, n_g, 11)
    icu_abs: np.ndarray          # absolute ICU occupancy
    t_tot: np.ndarray            # absolute tests per day
    r_ngm: np.ndarray            # reproduction number under lifted controls

    @property
    def n_g(self) -> int:
        return self.states.shape[1]

    def state_at(self, index) -> StateVector:
        return StateVector(self.states[index])

    @property
    def final_state(self) -> StateVector:
        return StateVector(self.states[-1])

    def peak_icu(self):
        k = int(np.argmax(self.icu_abs))
        return float(self.icu_abs[k]), float(self.times[k])

    def infectious_share(self) -> np.ndarray:
        """Total share in transmitting compartments (I and T classes)."""
        return self.states[:, :, [IS, IM, IA, TS, TO]].sum(axis=(1, 2))


def _control_schedule(policy: PiecewisePolicy, n_steps: int, step_days: float):
    """Per-step control index; the last control is held past policy end."""
    steps_per_interval = policy.interval_days / step_days
    rounded = round(steps_per_interval)
    if abs(steps_per_interval - rounded) > 1e-9 or rounded < 1:
        raise StateValidationError(
            f"step ({step_days} d) must divide the control interval "
            f"({policy.interval_days} d)")
    idx = np.arange(n_steps) // rounded
    return np.minimum(idx, policy.n_intervals - 1).astype(np.intc)


def _raise_blowup(fail, times, n_g):
    step, entry, kind, value = fail
    if kind == 1:
        group, comp = divmod(entry, N_COMP)
        raise IntegrationBlowupError(times[step], group, COMPARTMENTS[comp],
                                     value, "negativity")
    raise IntegrationBlowupError(times[step], -1, "sum", value - 1.0, "simplex")


def integrate_shares(x0_flat, betas, thetas, ctrl_idx, step_days,
                     p: ModelParameters, times=None):
    """Low-level kernel call returning raw flattened states.

    Raises :class:`IntegrationBlowupError` when the path leaves the simplex
    beyond tolerance; negative undershoot within tolerance is kept as-is
    (reporting may clip, dynamics never do).
    """
    states, *fail = _kernel.integrate(
        np.ascontiguousarray(x0_flat, dtype=float),
        np.ascontiguousarray(betas.reshape(len(betas), -1), dtype=float),
        np.ascontiguousarray(thetas, dtype=float),
        np.ascontiguousarray(ctrl_idx, dtype=np.intc),
        float(step_days), *p.kernel_args(),
        1e-9, 1e-9)
    if fail[2] != 0:
        if times is None:
            times = np.arange(states.shape[0]) * step_days
        _raise_blowup(fail, times, p.n_g)
    return states


def simulate(x0: StateVector, policy: PiecewisePolicy, p: ModelParameters,
             horizon_days: float, step_days: float = 1.0,
             compute_rngm: bool = True) -> Trajectory:
    """Integrate the dynamics under a piecewise-constant policy.

    Samples every ``step_days``; the policy's last control is held if the
    horizon is longer than the policy. ``compute_rngm=False`` skips the
    (comparatively expensive) reproduction-number series and stores NaN.
    """
    if x0.n_g != p.n_g or policy.n_g != p.n_g:
        raise DimensionError("state/policy dimensions do not match parameters")
    diag = validate_state(x0)
    if not diag.ok:
        raise StateValidationError(f"initial state invalid: {diag}")
    for c in policy.controls:
        c.check(p)
    n_steps = round(horizon_days / step_days)
    if abs(n_steps * step_days - horizon_days) > 1e-9 or n_steps < 1:
        raise StateValidationError("step must divide the horizon")
    ctrl_idx = _control_schedule(policy, n_steps, step_days)
    times = np.arange(n_steps + 1) * step_days

    betas, thetas = policy.stacked()
    states = integrate_shares(x0.flat(), betas, thetas, ctrl_idx, step_days,
                              p, times)
    states = states.reshape(-1, p.n_g, N_COMP)

    icu_abs = p.n_pop * states[:, :, HICU].sum(axis=1)
    # Sample k is governed by the control on [t_k, t_k + dt); the terminal
    # sample reuses the last active control.
    sample_ctrl = np.concatenate([ctrl_idx, ctrl_idx[-1:]])
    theta_series = thetas[sample_ctrl]
    t_tot = tests_series(states, theta_series, p)

    if compute_rngm:
        r_ngm = reproduction_series(states, p)
    else:
        r_ngm = np.full(len(times), np.nan)

    return Trajectory(times=times, states=states, icu_abs=icu_abs,
                      t_tot=t_tot, r_ngm=r_ngm)


def tests_series(states, theta_series, p: ModelParameters) -> np.ndarray:
    """Daily test counts along a sampled path (vectorized over samples)."""
    pool = states[:, :, [0, 1, 2, 3, 4, 9]].sum(axis=2)   # U per group
    symptomatic = p.eta_s * states[:, :, IS] + p.eta_m * states[:, :, IM]
    return p.n_pop * ((theta_series * pool).sum(axis=1)
                      + symptomatic.sum(axis=1))


def ngm_matrices(x: StateVector, u: ControlInput, p: ModelParameters):
    """New-infection matrix F and transition matrix V on the infected block.

    Block order per group: (E, IS, IM, IA, TS, TO). F carries the infection
    rates ``beta_ij * S_i`` from every transmitting class of group j into
    E_i; V carries the linear outflow/progression rates of those classes.
    """
    ng = p.n_g
    m = 6 * ng
    F = np.zeros((m, m))
    V = np.zeros((m, m))
    s = x.data[:, 0]
    th = u.theta
    for i in range(ng):
        r = 6 * i
        for j in range(ng):
            F[r, 6 * j + 1: 6 * j + 6] = u.beta[i, j] * s[i]
        V[r, r] = p.gamma
        V[r + 1, r + 1] = p.eta_s + th[i]
        V[r + 1, r] = -p.pi_s[i] * p.gamma
        V[r + 2, r + 2] = p.eta_m + th[i]
        V[r + 2, r] = -p.pi_m[i] * p.gamma
        V[r + 3, r + 3] = p.eta_a + th[i]
        V[r + 3, r] = -p.pi_a[i] * p.gamma
        V[r + 4, r + 4] = p.tau_s
        V[r + 4, r + 1] = -th[i]
        V[r + 5, r + 5] = p.tau_o
        V[r + 5, r + 2] = -th[i]
        V[r + 5, r + 3] = -th[i]
    return F, V


def spectral_radius(mat: np.ndarray, rel_tol: float = 1e-10,
                    max_iter: int = 100_000) -> float:
    """Power iteration for the dominant eigenvalue of a nonnegative matrix."""
    v = np.full(mat.shape[0], 1.0 / np.sqrt(mat.shape[0]))
    lam = 0.0
    for _ in range(max_iter):
        w = mat @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(nrm - lam) <= rel_tol * max(nrm, 1e-300):
            return nrm
        lam = nrm
    return lam


def ngm_reproduction_number(x: StateVector, u: ControlInput,
                            p: ModelParameters) -> float:
    """Effective reproduction number: spectral radius of ``F V^-1``."""
    F, V = ngm_matrices(x, u, p)
    if np.any(np.abs(np.diag(V)) < 1e-14):
        raise SingularTransitionError(
            "zero transition rate makes an infected compartment absorbing")
    try:
        W = np.linalg.inv(V)
    except np.linalg.LinAlgError as exc:
        raise SingularTransitionError(str(exc)) from exc
    return spectral_radius(F @ W)


def reproduction_series(states, p: ModelParameters) -> np.ndarray:
    """Reproduction number at each sample under fully lifted controls.

    Herd immunity is judged against the nominal control (full contacts, no
    testing): the epidemic is over only if reintroduction cannot grow even
    with every countermeasure removed. With zero testing V is constant, so
    it is factored once.
    """
    lifted = p.nominal_control()
    _, V = ngm_matrices(StateVector(states[0]), lifted, p)
    W = np.linalg.inv(V)
    ng = p.n_g
    out = np.empty(states.shape[0])
    F = np.zeros((6 * ng, 6 * ng))
    for k in range(states.shape[0]):
        s = states[k, :, 0]
        for i in range(ng):
            for j in range(ng):
                F[6 * i, 6 * j + 1: 6 * j + 6] = p.beta0[i, j] * s[i]
        out[k] = spectral_radius(F @ W)
    return out


def herd_immunity_time(traj: Trajectory, p: ModelParameters) -> Optional[float]:
    """First sample time with a lifted-control reproduction number below 1."""
    below = np.flatnonzero(traj.r_ngm < 1.0)
    if below.size == 0:
        return None
    return float(traj.times[below[0]])


def sir_reference(s0: float, i0: float, beta: float, eta: float,
                  horizon_days: float, step_days: float):
    """Scalar SIR path integrated with the same RK4 scheme (test oracle).

    Returns ``(times, columns)`` with columns ``(S, I, R)``.
    """
    if s0 < 0 or i0 < 0 or s0 + i0 > 1.0 + 1e-12:
        raise StateValidationError("need s0, i0 >= 0 and s0 + i0 <= 1")
    n = round(horizon_days / step_days)
    times = np.arange(n + 1) * step_days
    out = np.empty((n + 1, 3))
    out[0] = (s0, i0, 1.0 - s0 - i0)

    def f(y):
        s, i, _ = y
        inf = beta * s * i
        return np.array([-inf, inf - eta * i, eta * i])

    y = out[0].copy()
    for k in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * step_days * k1)
        k3 = f(y + 0.5 * step_days * k2)
        k4 = f(y + step_days * k3)
        y = y + step_days / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = y
    return times, out
