"""Registered experiment scenarios, sensitivity sweeps, and their outputs.

Every scenario runs end-to-end from one call (no network, no hidden
state), writes trajectory/policy CSVs plus a JSON manifest into its output
directory, and returns a summary dictionary. Sweep points are pure
functions fanned out over a process pool; all file writing happens
serially in the parent so reruns are byte-identical.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (BracketError, OcpInfeasibleError,
                     RecursiveFeasibilityError)
from .model import ModelParameters, StateVector
from .mpc import MpcConfig, MpcResult, run_mpc
from .ocp import (OcpSpec, derive_beta_min, objective_j2, objective_j3,
                  solve_ocp)
from .output import (parameters_dict, write_manifest, write_policy_csv,
                     write_trajectory_csv)
from .parameters import (DEFAULT_E0, DEFAULT_I0, default_parameters,
                         homogeneous_parameters, initial_state,
                         mean_contact_rate)
from .simulator import (PiecewisePolicy, Trajectory, herd_immunity_time,
                        simulate)

WEEK = 7.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Shared knobs for scenario runs; scenario-specific fields have
    defaults matching the reference experiments."""

    out_dir: Path
    p: ModelParameters = field(default_factory=default_parameters)
    e0_total: float = DEFAULT_E0
    i0_total: float = DEFAULT_I0
    step_days: float = 1.0
    horizon_weeks: int = 104
    deltas: tuple = (0.40, 0.45, 0.50, 0.55, 0.60)
    bracket: tuple = (0.40, 0.60)
    bisect_tol: float = 1e-3
    constant_delta_weeks: int = 156
    lift_weeks: int = 104
    tmax_factors: tuple = (1.0, 2.0, 4.0)
    hmax_values: tuple = (5000.0, 10000.0, 20000.0, 40000.0)
    k_weeks: int = 12
    k_weeks_list: tuple = (3, 6, 12, 26)
    mpc_total_weeks: int = 78
    workers: int = 1
    plot: bool = False

    def initial(self) -> StateVector:
        return initial_state(self.p, self.e0_total, self.i0_total)

    def outdir(self) -> Path:
        out = Path(self.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return out


def _config_echo(cfg: ScenarioConfig, **extra) -> dict:
    echo = {
        "parameters": parameters_dict(cfg.p),
        "e0_total": cfg.e0_total,
        "i0_total": cfg.i0_total,
        "step_days": cfg.step_days,
        "horizon_weeks": cfg.horizon_weeks,
    }
    echo.update(extra)
    return echo


def _maybe_plot(cfg: ScenarioConfig, traj: Trajectory, stem: str) -> None:
    if not cfg.plot:
        return
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    axes[0].plot(traj.times, traj.infectious_share())
    axes[0].set_ylabel("infectious share")
    axes[1].plot(traj.times, traj.icu_abs)
    axes[1].axhline(cfg.p.h_icu_max, ls="--", c="k")
    axes[1].set_ylabel("ICU occupancy")
    axes[2].plot(traj.times, traj.r_ngm)
    axes[2].axhline(1.0, ls="--", c="k")
    axes[2].set_ylabel("reproduction number")
    axes[2].set_xlabel("days")
    fig.tight_layout()
    fig.savefig(Path(cfg.outdir()) / f"{stem}.pdf")
    plt.close(fig)


# -- baseline: no countermeasures, one and three age groups ------------------

def scenario_baseline(cfg: ScenarioConfig) -> dict:
    """Uncontrolled epidemic for the stratified and the aggregated model."""
    out = cfg.outdir()
    horizon = cfg.horizon_weeks * WEEK
    runs = {}
    for label, p in (("3g", cfg.p), ("1g", homogeneous_parameters(cfg.p))):
        x0 = initial_state(p, cfg.e0_total, cfg.i0_total)
        policy = PiecewisePolicy.constant(p.nominal_control(),
                                          cfg.horizon_weeks)
        traj = simulate(x0, policy, p, horizon, cfg.step_days)
        write_trajectory_csv(out / f"baseline_{label}_trajectory.csv", traj)
        write_policy_csv(out / f"baseline_{label}_policy.csv", policy,
                         deltas=np.ones(policy.n_intervals))
        peak, when = traj.peak_icu()
        runs[label] = {"peak_icu": peak, "peak_day": when,
                       "herd_immunity_day": herd_immunity_time(traj, p)}
        _maybe_plot(cfg, traj, f"baseline_{label}")
    summary = {
        "runs": runs,
        "three_group_peak_earlier": runs["3g"]["peak_day"] < runs["1g"]["peak_day"],
        "three_group_peak_lower": runs["3g"]["peak_icu"] < runs["1g"]["peak_icu"],
    }
    write_manifest(out / "manifest.json",
                   {"scenario": "baseline",
                    "config": _config_echo(cfg),
                    "summary": summary})
    return summary


# -- constant homogeneous distancing ------------------------------------------

def constant_delta_policy(p: ModelParameters, delta: float,
                          n_weeks: int) -> PiecewisePolicy:
    from .model import ControlInput
    return PiecewisePolicy.constant(
        ControlInput(delta * p.beta0, np.zeros(p.n_g)), n_weeks)


def peak_icu_at_delta(p: ModelParameters, x0: StateVector, delta: float,
                      weeks: int, step_days: float = 1.0) -> float:
    policy = constant_delta_policy(p, delta, weeks)
    traj = simulate(x0, policy, p, weeks * WEEK, step_days,
                    compute_rngm=False)
    return traj.peak_icu()[0]


def find_max_feasible_delta(p: ModelParameters, x0: StateVector,
                            bracket=(0.40, 0.60), tol: float = 1e-3,
                            weeks: int = 156, step_days: float = 1.0):
    """Bisect for the largest constant distancing factor respecting the cap.

    Feasibility means the peak ICU occupancy over the whole window stays at
    or below the cap. The bracket must straddle the boundary.
    """
    lo, hi = bracket
    evaluations = []

    def feasible(delta):
        peak = peak_icu_at_delta(p, x0, delta, weeks, step_days)
        evaluations.append({"delta": delta, "peak_icu": peak})
        return peak <= p.h_icu_max

    if not feasible(lo):
        raise BracketError(f"lower bracket delta={lo} already infeasible")
    if feasible(hi):
        raise BracketError(f"upper bracket delta={hi} still feasible")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), evaluations


def lift_after(p: ModelParameters, x0: StateVector, delta: float,
               hold_weeks: int, lift_weeks: int, step_days: float = 1.0):
    """Constant distancing for ``hold_weeks`` then full lift; returns both
    trajectory segments."""
    held = simulate(x0, constant_delta_policy(p, delta, hold_weeks), p,
                    hold_weeks * WEEK, step_days, compute_rngm=False)
    lifted = simulate(held.final_state,
                      PiecewisePolicy.constant(p.nominal_control(), lift_weeks),
                      p, lift_weeks * WEEK, step_days, compute_rngm=False)
    return held, lifted


def scenario_constant_delta(cfg: ScenarioConfig) -> dict:
    """Constant-distancing study: per-delta severity, the feasibility
    threshold, and the rebound after lifting restrictions."""
    out = cfg.outdir()
    p = cfg.p
    x0 = cfg.initial()
    weeks = cfg.constant_delta_weeks

    per_delta = []
    for delta in cfg.deltas:
        policy = constant_delta_policy(p, delta, weeks)
        traj = simulate(x0, policy, p, weeks * WEEK, cfg.step_days)
        peak, when = traj.peak_icu()
        write_trajectory_csv(
            out / f"constant_delta_{delta:.3f}_trajectory.csv", traj)
        per_delta.append({"delta": delta, "peak_icu": peak,
                          "peak_day": when,
                          "feasible": peak <= p.h_icu_max})

    threshold, evaluations = find_max_feasible_delta(
        p, x0, cfg.bracket, cfg.bisect_tol, weeks, cfg.step_days)

    rebound = {}
    for label, delta in (("strict", 0.40), ("threshold", threshold)):
        held, lifted = lift_after(p, x0, delta, weeks, cfg.lift_weeks,
                                  cfg.step_days)
        rebound[label] = {
            "delta": delta,
            "held_peak_icu": held.peak_icu()[0],
            "post_lift_peak_icu": lifted.peak_icu()[0],
        }
        write_trajectory_csv(out / f"lift_{label}_trajectory.csv", lifted)

    summary = {
        "per_delta": per_delta,
        "threshold_delta": threshold,
        "bisection_evaluations": evaluations,
        "rebound": rebound,
        "stricter_rebounds_higher": (
            rebound["strict"]["post_lift_peak_icu"]
            > rebound["threshold"]["post_lift_peak_icu"]),
    }
    write_manifest(out / "manifest.json",
                   {"scenario": "constant-delta",
                    "config": _config_echo(cfg, weeks=weeks,
                                           deltas=list(cfg.deltas)),
                    "summary": summary})
    return summary


# -- open-loop optimal policies ------------------------------------------------

def _weekly_bbar(policy: PiecewisePolicy, p: ModelParameters):
    return [mean_contact_rate(p, c.beta) for c in policy.controls]


def _solution_outputs(out, stem, sol, p, deltas=None):
    write_trajectory_csv(out / f"{stem}_trajectory.csv", sol.trajectory)
    write_policy_csv(out / f"{stem}_policy.csv", sol.policy, deltas=deltas)
    d = sol.diagnostics
    return {
        "objective": sol.objective,
        "iterations": d.iterations,
        "n_simulations": d.n_simulations,
        "converged": d.converged,
        "feasibility": d.feasibility,
        "verified_feasibility": d.verified_feasibility,
        "stationarity": d.stationarity,
        "constraint_margin": d.constraint_margin,
        "terminal_r_ngm": float(sol.trajectory.r_ngm[-1]),
        "herd_immunity_day": herd_immunity_time(sol.trajectory, p),
        "bbar_weekly": _weekly_bbar(sol.policy, p),
        "bbar_nominal": mean_contact_rate(p),
    }


def solve_chain(cfg: ScenarioConfig, kind: str):
    """Solve one problem kind, chaining the age-dependent problem from the
    homogeneous solution as in the reference pipeline."""
    x0 = cfg.initial()
    tf = cfg.horizon_weeks * WEEK
    if kind in ("testing", "homogeneous"):
        spec = OcpSpec(kind=kind, x0=x0, p=cfg.p, tf=tf)
        return solve_ocp(spec), None
    sol2 = solve_ocp(OcpSpec(kind="homogeneous", x0=x0, p=cfg.p, tf=tf))
    deltas = np.array([c.beta[0, 0] / cfg.p.beta0[0, 0]
                       for c in sol2.policy.controls])
    beta_min = derive_beta_min(deltas, cfg.p)
    spec3 = OcpSpec(kind="age_dependent", x0=x0, p=cfg.p, tf=tf,
                    beta_min=beta_min,
                    constraint_margin=max(
                        1e-3, sol2.diagnostics.constraint_margin))
    sol3 = solve_ocp(spec3, initial_guess=sol2.policy)
    return sol3, sol2


def scenario_ocp(cfg: ScenarioConfig, kind: str) -> dict:
    out = cfg.outdir()
    p = cfg.p
    sol, sol2 = solve_chain(cfg, kind)
    summary = {}
    if sol2 is not None:
        deltas2 = np.array([c.beta[0, 0] / p.beta0[0, 0]
                            for c in sol2.policy.controls])
        summary["homogeneous_stage"] = _solution_outputs(
            out, "ocp_homogeneous_seed", sol2, p, deltas=deltas2)
        summary["beta_min_scale"] = float(deltas2.min())
        summary["seed_objective_j3"] = objective_j3(sol2.policy, p,
                                                    sol.spec.kappa)
    deltas = None
    if kind == "homogeneous":
        deltas = np.array([c.beta[0, 0] / p.beta0[0, 0]
                           for c in sol.policy.controls])
        summary["min_delta"] = float(deltas.min())
    summary["solution"] = _solution_outputs(out, f"ocp_{kind}", sol, p,
                                            deltas=deltas)
    write_manifest(out / "manifest.json",
                   {"scenario": f"ocp-{kind.replace('_', '-')}",
                    "config": _config_echo(cfg, kind=kind),
                    "summary": summary})
    _maybe_plot(cfg, sol.trajectory, f"ocp_{kind}")
    return summary


# -- closed loop ----------------------------------------------------------------

def _write_mpc_outputs(out, stem, result: MpcResult, p) -> dict:
    write_trajectory_csv(out / f"{stem}_trajectory.csv", result.trajectory)
    write_policy_csv(out / f"{stem}_policy.csv", result.policy)
    lines = ["week,objective,iterations,n_simulations,feasibility,"
             "stationarity,converged"]
    for r in result.steps:
        lines.append(f"{r.week},{r.objective!r},{r.iterations},"
                     f"{r.n_simulations},{r.feasibility!r},"
                     f"{r.stationarity!r},{int(r.converged)}")
    (out / f"{stem}_steps.csv").write_text("\n".join(lines) + "\n",
                                           encoding="utf-8")
    return {
        "n_solves": result.n_solves,
        "peak_icu": result.trajectory.peak_icu()[0],
        "herd_immunity_day": herd_immunity_time(result.trajectory, p),
        "terminal_r_ngm": float(result.trajectory.r_ngm[-1]),
    }


def mpc_chain(cfg: ScenarioConfig, kind: str, k_weeks: int,
              total_weeks: int) -> MpcResult:
    """Closed-loop run; the age-dependent problem derives its contact floor
    from a homogeneous open-loop solve at the same capacities."""
    x0 = cfg.initial()
    beta_min = None
    if kind == "age_dependent":
        sol2 = solve_ocp(OcpSpec(kind="homogeneous", x0=x0, p=cfg.p,
                                 tf=total_weeks * WEEK))
        deltas = np.array([c.beta[0, 0] / cfg.p.beta0[0, 0]
                           for c in sol2.policy.controls])
        beta_min = derive_beta_min(deltas, cfg.p)
    config = MpcConfig(kind=kind, k_weeks=k_weeks, total_weeks=total_weeks,
                       p=cfg.p, beta_min=beta_min,
                       sim_step_days=min(cfg.step_days, 0.5))
    return run_mpc(config, x0)


def scenario_mpc(cfg: ScenarioConfig, kind: str = "age_dependent") -> dict:
    """Closed-loop runs across prediction-horizon lengths."""
    out = cfg.outdir()
    per_k = {}
    for k in cfg.k_weeks_list:
        result = mpc_chain(cfg, kind, k, cfg.mpc_total_weeks)
        info = _write_mpc_outputs(out, f"mpc_{kind}_K{k}", result, cfg.p)
        if kind == "age_dependent":
            info["distancing_cost"] = objective_j3(result.policy, cfg.p,
                                                   kappa=0.0)
        else:
            info["distancing_cost"] = objective_j2(result.policy, cfg.p,
                                                   kappa=0.0)
        icu = result.trajectory.icu_abs
        hit = np.flatnonzero(icu >= 0.98 * cfg.p.h_icu_max)
        info["cap_hit_day"] = (float(result.trajectory.times[hit[0]])
                               if hit.size else None)
        per_k[k] = info
    summary = {"kind": kind, "per_horizon": per_k}
    write_manifest(out / "manifest.json",
                   {"scenario": f"mpc-{kind.replace('_', '-')}",
                    "config": _config_echo(cfg, k_weeks_list=list(cfg.k_weeks_list),
                                           total_weeks=cfg.mpc_total_weeks),
                    "summary": summary})
    return summary


# -- sensitivity sweeps -----------------------------------------------------------

def _tmax_point(args):
    cfg, factor = args
    p = replace(cfg.p, t_max=factor * cfg.p.t_max)
    point_cfg = replace(cfg, p=p)
    try:
        result = mpc_chain(point_cfg, "homogeneous", cfg.k_weeks,
                           cfg.horizon_weeks)
    except (OcpInfeasibleError, RecursiveFeasibilityError) as exc:
        return {"tmax_factor": factor, "feasible": False, "error": str(exc)}
    deltas = np.array([c.beta[0, 0] / p.beta0[0, 0]
                       for c in result.policy.controls])
    tests_total = float(np.trapz(result.trajectory.t_tot,
                                 result.trajectory.times))
    return {
        "tmax_factor": factor,
        "feasible": True,
        "distancing_cost": objective_j2(result.policy, p, kappa=0.0),
        "min_delta": float(deltas.min()),
        "tests_total": tests_total,
        "peak_icu": result.trajectory.peak_icu()[0],
    }


def _map_points(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def sweep_tmax(cfg: ScenarioConfig) -> dict:
    """Distancing cost as the testing capacity scales up."""
    out = cfg.outdir()
    points = _map_points(_tmax_point, [(cfg, f) for f in cfg.tmax_factors],
                         cfg.workers)
    costs = [pt["distancing_cost"] for pt in points if pt["feasible"]]
    summary = {
        "points": points,
        "cost_nonincreasing": all(b <= a * (1 + 1e-6)
                                  for a, b in zip(costs, costs[1:])),
    }
    _write_sweep_csv(out / "sweep_tmax.csv", points)
    write_manifest(out / "manifest.json",
                   {"scenario": "sweep-tmax",
                    "config": _config_echo(cfg, factors=list(cfg.tmax_factors),
                                           k_weeks=cfg.k_weeks),
                    "summary": summary})
    return summary


def _hmax_point(args):
    cfg, hmax, factor = args
    p = replace(cfg.p, h_icu_max=hmax, t_max=factor * cfg.p.t_max)
    point_cfg = replace(cfg, p=p)
    try:
        result = mpc_chain(point_cfg, "age_dependent", cfg.k_weeks,
                           cfg.horizon_weeks)
    except (OcpInfeasibleError, RecursiveFeasibilityError) as exc:
        return {"h_icu_max": hmax, "tmax_factor": factor, "feasible": False,
                "error": str(exc)}
    ttot = result.trajectory.t_tot
    times = result.trajectory.times
    widx = np.minimum((times // WEEK).astype(int),
                      result.policy.n_intervals - 1)
    per_week_max = np.array([ttot[widx == w].max()
                             for w in range(result.policy.n_intervals)])
    return {
        "h_icu_max": hmax,
        "tmax_factor": factor,
        "feasible": True,
        "distancing_cost": objective_j3(result.policy, p, kappa=0.0),
        "tests_total": float(np.trapz(ttot, times)),
        "test_cap_pinned_all_weeks": bool(
            (per_week_max >= 0.99 * p.t_max).all()),
        "peak_icu": result.trajectory.peak_icu()[0],
    }


def sweep_hmax(cfg: ScenarioConfig) -> dict:
    """Distancing cost as the ICU capacity scales; saturation expected."""
    out = cfg.outdir()
    items = [(cfg, h, f) for f in cfg.tmax_factors for h in cfg.hmax_values]
    points = _map_points(_hmax_point, items, cfg.workers)
    base = [pt for pt in points
            if pt["feasible"] and pt["tmax_factor"] == cfg.tmax_factors[0]]
    costs = {pt["h_icu_max"]: pt["distancing_cost"] for pt in base}
    hs = sorted(costs)
    summary = {
        "points": points,
        "cost_decreasing": all(costs[b] < costs[a]
                               for a, b in zip(hs, hs[1:])),
    }
    if {10000.0, 20000.0, 40000.0} <= set(hs):
        gain_mid = costs[10000.0] - costs[20000.0]
        gain_high = costs[20000.0] - costs[40000.0]
        summary["saturation_ratio"] = (gain_high / gain_mid
                                       if gain_mid > 0 else None)
    _write_sweep_csv(out / "sweep_hmax.csv", points)
    write_manifest(out / "manifest.json",
                   {"scenario": "sweep-hmax",
                    "config": _config_echo(cfg, hmax_values=list(cfg.hmax_values),
                                           factors=list(cfg.tmax_factors),
                                           k_weeks=cfg.k_weeks),
                    "summary": summary})
    return summary


def _write_sweep_csv(path, points) -> None:
    keys = sorted({k for pt in points for k in pt})
    lines = [",".join(keys)]
    for pt in points:
        lines.append(",".join("" if k not in pt else
                              (repr(pt[k]) if isinstance(pt[k], float)
                               else str(pt[k]))
                              for k in keys))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


SCENARIOS = {
    "baseline": scenario_baseline,
    "constant-delta": scenario_constant_delta,
    "optimal-testing": lambda cfg: scenario_ocp(cfg, "testing"),
    "optimal-homogeneous": lambda cfg: scenario_ocp(cfg, "homogeneous"),
    "optimal-age-dependent": lambda cfg: scenario_ocp(cfg, "age_dependent"),
    "mpc-age-dependent": lambda cfg: scenario_mpc(cfg, "age_dependent"),
    "sweep-tmax": sweep_tmax,
    "sweep-hmax": sweep_hmax,
}


def run_scenario(name: str, cfg: ScenarioConfig) -> dict:
    if name not in SCENARIOS:
        from .errors import ConfigError
        raise ConfigError(
            f"unknown scenario {name!r}; available: {sorted(SCENARIOS)}")
    return SCENARIOS[name](cfg)
