"""Receding-horizon (closed-loop) policy computation.

Each step reads the current plant state, solves the finite-horizon problem
over the next K control intervals, applies only the first interval, and
advances the plant with the same simulator (exact state feedback, no
model-plant mismatch). The final window's remaining intervals are applied
after the last solve, so a prediction horizon equal to the run length
degenerates to a single open-loop solve.

Short horizons are allowed to lose feasibility mid-run; that failure is
reported with its step index instead of being patched by terminal
ingredients.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import (OcpInfeasibleError, RecursiveFeasibilityError,
                     StateValidationError)
from .model import ModelParameters, StateVector
from .ocp import OcpSpec, ShootingEvaluator, Transcription, solve_ocp
from .simulator import PiecewisePolicy, Trajectory, simulate

DAYS_PER_WEEK = 7.0


@dataclass(frozen=True)
class MpcConfig:
    """Closed-loop run description around one problem kind."""

    kind: str
    k_weeks: int
    total_weeks: int
    p: ModelParameters
    kappa: float = 1e-5
    beta_min: Optional[np.ndarray] = None
    theta_max: float = 2.5
    interval_days: float = DAYS_PER_WEEK
    sim_step_days: float = 0.5
    constraint_step_days: float = 1.0
    constraint_margin: float = 1e-3
    symmetric_beta: bool = True
    warm_start: bool = True
    maxiter: int = 150
    ftol: float = 1e-9

    def __post_init__(self):
        if self.k_weeks < 1:
            raise StateValidationError("prediction horizon must be >= 1 week")
        if self.total_weeks < self.k_weeks:
            raise StateValidationError(
                "run length must be at least the prediction horizon")

    def window_spec(self, x0: StateVector) -> OcpSpec:
        return OcpSpec(
            kind=self.kind,
            x0=x0,
            p=self.p,
            tf=self.k_weeks * self.interval_days,
            interval_days=self.interval_days,
            kappa=self.kappa,
            beta_min=self.beta_min,
            constraint_step_days=self.constraint_step_days,
            sim_step_days=self.sim_step_days,
            theta_max=self.theta_max,
            symmetric_beta=self.symmetric_beta,
            constraint_margin=self.constraint_margin,
            maxiter=self.maxiter,
            ftol=self.ftol,
        )


@dataclass(frozen=True)
class MpcStepRecord:
    week: int
    objective: float
    iterations: int
    n_simulations: int
    feasibility: float
    stationarity: float
    converged: bool


@dataclass(frozen=True)
class MpcResult:
    config: MpcConfig
    policy: PiecewisePolicy          # the applied closed-loop policy
    trajectory: Trajectory
    steps: tuple

    @property
    def n_solves(self) -> int:
        return len(self.steps)


def _shift_warm_start(z, n_per_week):
    zw = z.reshape(-1, n_per_week)
    return np.concatenate([zw[1:], zw[-1:]]).reshape(-1)


def run_mpc(config: MpcConfig, x0: StateVector) -> MpcResult:
    """Run the receding-horizon loop from ``x0``.

    Raises :class:`RecursiveFeasibilityError` as soon as a window becomes
    infeasible; the exception carries the partially applied result so the
    run can be reported rather than silently violating the caps.
    """
    p = config.p
    spw = round(config.interval_days / config.sim_step_days)
    if abs(spw * config.sim_step_days - config.interval_days) > 1e-9:
        raise StateValidationError("sim step must divide the interval")

    applied = []
    records = []
    state = x0
    warm = None
    last_solve_week = config.total_weeks - config.k_weeks

    for week in range(last_solve_week + 1):
        spec = config.window_spec(state)
        try:
            sol = solve_ocp(spec, initial_guess=warm)
        except OcpInfeasibleError as exc:
            partial = _partial_result(config, x0, applied, records)
            raise RecursiveFeasibilityError(week, str(exc),
                                            partial_result=partial) from exc
        d = sol.diagnostics
        records.append(MpcStepRecord(
            week=week, objective=sol.objective, iterations=d.iterations,
            n_simulations=d.n_simulations, feasibility=d.feasibility,
            stationarity=d.stationarity, converged=d.converged))

        if week < last_solve_week:
            applied.append(sol.policy.controls[0])
            seg = simulate(state, PiecewisePolicy((sol.policy.controls[0],),
                                                  config.interval_days),
                           p, config.interval_days,
                           config.sim_step_days, compute_rngm=False)
            state = seg.final_state
            if config.warm_start:
                tr = Transcription(spec)
                warm = _shift_warm_start(sol.z, tr.n_per_week)
            else:
                warm = None
        else:
            applied.extend(sol.policy.controls)

    policy = PiecewisePolicy(tuple(applied), config.interval_days)
    trajectory = simulate(x0, policy, p,
                          config.total_weeks * config.interval_days,
                          config.sim_step_days)
    return MpcResult(config=config, policy=policy, trajectory=trajectory,
                     steps=tuple(records))


def _partial_result(config, x0, applied, records):
    if not applied:
        return None
    policy = PiecewisePolicy(tuple(applied), config.interval_days)
    trajectory = simulate(x0, policy, config.p,
                          len(applied) * config.interval_days,
                          config.sim_step_days)
    return MpcResult(config=config, policy=policy, trajectory=trajectory,
                     steps=tuple(records))
