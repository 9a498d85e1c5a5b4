"""Deterministic file output and flat-text configuration parsing.

All CSV emission uses shortest round-trip float formatting and no
timestamps, so re-running an identical configuration produces
byte-identical files. Negative integration undershoot within tolerance is
clipped to zero here, in reporting only.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .model import COMPARTMENTS, ModelParameters
from .parameters import DEFAULT_E0, DEFAULT_I0, default_parameters
from .simulator import PiecewisePolicy, Trajectory

TRAJECTORY_HEADER = ("t_days,group,S,E,IS,IM,IA,TS,TO,P,HICU,RU,RK,"
                     "icu_abs,t_tot,r_ngm")


def _fmt(x) -> str:
    x = float(x)
    if x != x:  # NaN
        return "nan"
    return repr(x)


def _clip_report(x: float) -> float:
    return 0.0 if -1e-9 < x < 0.0 else x


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """One row per sample per group; aggregate columns repeat per group."""
    lines = [TRAJECTORY_HEADER]
    for k in range(len(traj.times)):
        aggregates = (_fmt(traj.icu_abs[k]), _fmt(traj.t_tot[k]),
                      _fmt(traj.r_ngm[k]))
        for g in range(traj.n_g):
            row = [_fmt(traj.times[k]), str(g)]
            row.extend(_fmt(_clip_report(v)) for v in traj.states[k, g])
            row.extend(aggregates)
            lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def empty_trajectory_csv(path) -> None:
    Path(path).write_text(TRAJECTORY_HEADER + "\n", encoding="utf-8")


def policy_header(n_g: int) -> str:
    cols = ["week"]
    cols += [f"beta_{i}_{j}" for i in range(n_g) for j in range(n_g)]
    cols += [f"theta_{i}" for i in range(n_g)]
    cols.append("delta")
    return ",".join(cols)


def write_policy_csv(path, policy: PiecewisePolicy, deltas=None) -> None:
    """Weekly controls; the delta column is blank unless supplied."""
    ng = policy.n_g
    lines = [policy_header(ng)]
    for w, c in enumerate(policy.controls):
        row = [str(w)]
        row.extend(_fmt(v) for v in c.beta.reshape(-1))
        row.extend(_fmt(v) for v in c.theta)
        row.append("" if deltas is None else _fmt(deltas[w]))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parameters_dict(p: ModelParameters) -> dict:
    return {
        "n_g": p.n_g,
        "N": list(map(float, p.N)),
        "beta0": [list(map(float, row)) for row in p.beta0],
        "gamma": p.gamma,
        "pi_s": list(map(float, p.pi_s)),
        "pi_m": list(map(float, p.pi_m)),
        "pi_a": list(map(float, p.pi_a)),
        "eta_s": p.eta_s, "eta_m": p.eta_m, "eta_a": p.eta_a,
        "tau_s": p.tau_s, "tau_o": p.tau_o,
        "rho": p.rho, "sigma": p.sigma,
        "n_pop": p.n_pop, "h_icu_max": p.h_icu_max, "t_max": p.t_max,
    }


def write_manifest(path, payload: dict) -> None:
    base = {
        "package": "seitphr",
        "version": __version__,
        "tolerances": {
            "simplex": 1e-9,
            "nonnegativity": 1e-12,
            "trajectory_undershoot": 1e-9,
            "ocp_feasibility": 1e-6,
        },
    }
    base.update(payload)
    Path(path).write_text(json.dumps(base, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


# -- flat key/value configuration -------------------------------------------

_SCALAR_KEYS = {
    "gamma", "eta_s", "eta_m", "eta_a", "tau_s", "tau_o", "rho", "sigma",
    "n_pop", "h_icu_max", "t_max",
}
_VECTOR_KEYS = {"N", "pi_s", "pi_m", "pi_a"}
_MATRIX_KEYS = {"beta0"}
_SEED_KEYS = {"e0_total", "i0_total"}


def parse_config(path) -> dict:
    """Parse a flat ``key = value`` override file.

    Scalars use their parameter name, vector entries ``<name>.<i>``, matrix
    entries ``matrix.<name>.<i>.<j>``. Lines starting with ``#`` and blank
    lines are ignored. Unknown keys are rejected.
    """
    overrides: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            num = float(value)
        except ValueError as exc:
            raise ConfigError(
                f"{path}:{lineno}: value {value!r} is not a number") from exc
        parts = key.split(".")
        if len(parts) == 1 and key in _SCALAR_KEYS | _SEED_KEYS:
            overrides[key] = num
        elif len(parts) == 2 and parts[0] in _VECTOR_KEYS:
            overrides.setdefault(parts[0], {})[int(parts[1])] = num
        elif (len(parts) == 4 and parts[0] == "matrix"
              and parts[1] in _MATRIX_KEYS):
            overrides.setdefault(parts[1], {})[
                (int(parts[2]), int(parts[3]))] = num
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    return overrides


def apply_overrides(overrides: dict, base: ModelParameters = None):
    """Apply parsed overrides; returns ``(parameters, e0_total, i0_total)``."""
    p = default_parameters() if base is None else base
    e0 = overrides.get("e0_total", DEFAULT_E0)
    i0 = overrides.get("i0_total", DEFAULT_I0)
    fields = {}
    for key, value in overrides.items():
        if key in _SEED_KEYS:
            continue
        if key in _SCALAR_KEYS:
            fields[key] = value
        elif key in _VECTOR_KEYS:
            vec = np.array(getattr(p, key), dtype=float)
            for i, v in value.items():
                if not 0 <= i < p.n_g:
                    raise ConfigError(f"{key}.{i}: index out of range")
                vec[i] = v
            fields[key] = vec
        elif key in _MATRIX_KEYS:
            mat = np.array(getattr(p, key), dtype=float)
            for (i, j), v in value.items():
                if not (0 <= i < p.n_g and 0 <= j < p.n_g):
                    raise ConfigError(f"matrix.{key}.{i}.{j}: out of range")
                mat[i, j] = v
            fields[key] = mat
    try:
        q = replace(p, **fields) if fields else p
    except Exception as exc:
        raise ConfigError(f"invalid parameter override: {exc}") from exc
    return q, e0, i0
