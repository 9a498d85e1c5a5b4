"""Command-line front end.

Exit codes: 0 success, 2 infeasible scenario (including lost recursive
feasibility and bad bisection brackets), 3 solver nonconvergence,
4 configuration error. Runs are fully deterministic; there is no seed.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .errors import (BracketError, ConfigError, OcpInfeasibleError,
                     OcpNonconvergenceError, RecursiveFeasibilityError,
                     SeitphrError)
from .model import ControlInput
from .mpc import MpcConfig, run_mpc
from .output import (apply_overrides, parse_config, write_manifest,
                     write_policy_csv, write_trajectory_csv)
from .parameters import homogeneous_parameters, initial_state
from .scenarios import (SCENARIOS, ScenarioConfig, _config_echo,
                        _write_mpc_outputs, run_scenario, scenario_mpc,
                        scenario_ocp)
from .simulator import PiecewisePolicy, herd_immunity_time, simulate

_KIND_NAMES = {
    "testing": "testing",
    "homogeneous": "homogeneous",
    "age-dependent": "age_dependent",
}


def _parse_floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") \
            from exc


def _parse_ints(text):
    return tuple(int(v) for v in _parse_floats(text))


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=False),
              default=None, help="Flat key = value parameter override file.")
@click.option("--out", "out_dir", type=click.Path(), default="runs",
              help="Output directory.")
@click.option("--step", "step_days", type=float, default=1.0,
              help="Sample step in days.")
@click.option("--horizon-weeks", type=int, default=104)
@click.option("--workers", type=int, default=1,
              help="Worker processes for sweep points.")
@click.option("--plot", is_flag=True, help="Also render PDF plots.")
@click.pass_context
def cli(ctx, config_path, out_dir, step_days, horizon_weeks, workers, plot):
    """Epidemic simulation and optimal testing/distancing policies."""
    overrides = {}
    if config_path is not None:
        if not Path(config_path).exists():
            raise ConfigError(f"config file not found: {config_path}")
        overrides = parse_config(config_path)
    p, e0, i0 = apply_overrides(overrides)
    ctx.obj = ScenarioConfig(out_dir=Path(out_dir), p=p, e0_total=e0,
                             i0_total=i0, step_days=step_days,
                             horizon_weeks=horizon_weeks, workers=workers,
                             plot=plot)


@cli.command()
@click.option("--groups", type=click.Choice(["1", "3"]), default="3")
@click.option("--delta", type=float, default=1.0,
              help="Constant contact-reduction factor in [0, 1].")
@click.option("--theta", type=float, default=0.0,
              help="Constant per-group testing rate (1/day).")
@click.option("--weeks", type=int, default=None)
@click.pass_obj
def simulate_cmd(cfg: ScenarioConfig, groups, delta, theta, weeks):
    """Simulate a constant policy and write trajectory/policy CSVs."""
    weeks = weeks or cfg.horizon_weeks
    p = cfg.p if groups == "3" else homogeneous_parameters(cfg.p)
    x0 = initial_state(p, cfg.e0_total, cfg.i0_total)
    control = ControlInput(delta * p.beta0, np.full(p.n_g, theta))
    policy = PiecewisePolicy.constant(control, weeks)
    traj = simulate(x0, policy, p, weeks * 7.0, cfg.step_days)
    out = cfg.outdir()
    write_trajectory_csv(out / "simulate_trajectory.csv", traj)
    write_policy_csv(out / "simulate_policy.csv", policy,
                     deltas=np.full(weeks, delta))
    peak, when = traj.peak_icu()
    write_manifest(out / "manifest.json", {
        "scenario": "simulate",
        "config": _config_echo(cfg, groups=int(groups), delta=delta,
                               theta=theta, weeks=weeks),
        "summary": {"peak_icu": peak, "peak_day": when,
                    "herd_immunity_day": herd_immunity_time(traj, p)},
    })
    click.echo(f"peak ICU {peak:.0f} at day {when:.0f}")


cli.add_command(simulate_cmd, name="simulate")


@cli.command()
@click.argument("kind", type=click.Choice(sorted(_KIND_NAMES)))
@click.pass_obj
def optimize(cfg: ScenarioConfig, kind):
    """Solve one open-loop problem and write its outputs."""
    summary = scenario_ocp(cfg, _KIND_NAMES[kind])
    click.echo(f"objective {summary['solution']['objective']:.6g}")


@cli.command()
@click.option("--kind", type=click.Choice(sorted(_KIND_NAMES)),
              default="age-dependent")
@click.option("--k-weeks", type=int, default=12)
@click.option("--total-weeks", type=int, default=78)
@click.pass_obj
def mpc(cfg: ScenarioConfig, kind, k_weeks, total_weeks):
    """Run one receding-horizon (closed-loop) experiment."""
    from .scenarios import mpc_chain
    out = cfg.outdir()
    try:
        result = mpc_chain(cfg, _KIND_NAMES[kind], k_weeks, total_weeks)
    except RecursiveFeasibilityError as exc:
        payload = {
            "scenario": "mpc",
            "config": _config_echo(cfg, kind=kind, k_weeks=k_weeks,
                                   total_weeks=total_weeks),
            "summary": {
                "feasible": False,
                "failed_at_step": exc.step_index,
                "cause": str(exc.cause),
            },
        }
        if exc.partial_result is not None:
            payload["summary"]["applied_weeks"] = \
                exc.partial_result.policy.n_intervals
            _write_mpc_outputs(out, "mpc_partial", exc.partial_result, cfg.p)
        write_manifest(out / "manifest.json", payload)
        click.echo(f"recursive feasibility lost at step {exc.step_index}",
                   err=True)
        raise
    info = _write_mpc_outputs(out, f"mpc_{_KIND_NAMES[kind]}_K{k_weeks}",
                              result, cfg.p)
    write_manifest(out / "manifest.json", {
        "scenario": "mpc",
        "config": _config_echo(cfg, kind=kind, k_weeks=k_weeks,
                               total_weeks=total_weeks),
        "summary": dict(info, feasible=True),
    })
    click.echo(f"peak ICU {info['peak_icu']:.0f}, solves {result.n_solves}")


@cli.command()
@click.argument("what", type=click.Choice(["tmax", "hmax", "delta"]))
@click.option("--factors", default=None,
              help="Comma-separated T-max factors (tmax sweep).")
@click.option("--hmax-values", default=None,
              help="Comma-separated ICU caps (hmax sweep).")
@click.option("--deltas", default=None,
              help="Comma-separated constant distancing factors.")
@click.option("--k-weeks", type=int, default=12)
@click.pass_obj
def sweep(cfg: ScenarioConfig, what, factors, hmax_values, deltas, k_weeks):
    """Sensitivity sweeps over capacities or constant distancing."""
    cfg = replace(cfg, k_weeks=k_weeks)
    if factors:
        cfg = replace(cfg, tmax_factors=_parse_floats(factors))
    if hmax_values:
        cfg = replace(cfg, hmax_values=_parse_floats(hmax_values))
    if deltas:
        cfg = replace(cfg, deltas=_parse_floats(deltas))
    name = {"tmax": "sweep-tmax", "hmax": "sweep-hmax",
            "delta": "constant-delta"}[what]
    summary = run_scenario(name, cfg)
    click.echo(f"{name} done")
    return summary


@cli.command()
@click.argument("name")
@click.pass_obj
def scenario(cfg: ScenarioConfig, name):
    """Run a registered scenario by id."""
    run_scenario(name, cfg)
    click.echo(f"{name} done")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(4)
    except (OcpInfeasibleError, RecursiveFeasibilityError,
            BracketError) as exc:
        click.echo(f"infeasible: {exc}", err=True)
        sys.exit(2)
    except OcpNonconvergenceError as exc:
        click.echo(f"solver did not converge: {exc}", err=True)
        sys.exit(3)
    except click.UsageError as exc:
        exc.show()
        sys.exit(4)
    except click.ClickException as exc:
        exc.show()
        sys.exit(4)
    except click.exceptions.Abort:
        sys.exit(130)
    except SeitphrError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(4)
    return 0


if __name__ == "__main__":
    main()
