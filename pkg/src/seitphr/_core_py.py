"""Pure-Python fallback kernel, call-compatible with the compiled core.

Used automatically when the extension module is unavailable (or when
``SEITPHR_PURE_PYTHON`` is set); identical semantics, roughly two orders of
magnitude slower on long horizons.
"""

import numpy as np

BACKEND = "python"

# Flattened compartment layout mirrors _core.pyx:
# 0=S 1=E 2=IS 3=IM 4=IA 5=TS 6=TO 7=P 8=HICU 9=RU 10=RK


def _eval_rhs(x2, beta, theta, pi_s, pi_m, pi_a, gamma,
              eta_s, eta_m, eta_a, tau_s, tau_o, rho, sigma, out):
    """Vector field on an (ng, 11) state view, writing into ``out``."""
    force = beta @ (x2[:, 2] + x2[:, 3] + x2[:, 4] + x2[:, 5] + x2[:, 6])
    einc = force * x2[:, 0]
    eout = gamma * x2[:, 1]
    out[:, 0] = -einc
    out[:, 1] = einc - eout
    out[:, 2] = pi_s * eout - (eta_s + theta) * x2[:, 2]
    out[:, 3] = pi_m * eout - (eta_m + theta) * x2[:, 3]
    out[:, 4] = pi_a * eout - (eta_a + theta) * x2[:, 4]
    out[:, 5] = theta * x2[:, 2] - tau_s * x2[:, 5]
    out[:, 6] = theta * (x2[:, 3] + x2[:, 4]) - tau_o * x2[:, 6]
    out[:, 7] = eta_s * x2[:, 2] + tau_s * x2[:, 5] - rho * x2[:, 7]
    out[:, 8] = rho * x2[:, 7] - sigma * x2[:, 8]
    out[:, 9] = eta_a * x2[:, 4]
    out[:, 10] = eta_m * x2[:, 3] + tau_o * x2[:, 6] + sigma * x2[:, 8]
    return out


def rhs(x, beta, theta, pi_s, pi_m, pi_a, gamma, eta_s, eta_m, eta_a,
        tau_s, tau_o, rho, sigma):
    ng = theta.shape[0]
    out = np.empty((ng, 11))
    _eval_rhs(x.reshape(ng, 11), beta.reshape(ng, ng), theta,
              pi_s, pi_m, pi_a, gamma, eta_s, eta_m, eta_a,
              tau_s, tau_o, rho, sigma, out)
    return out.reshape(-1)


def integrate(x0, betas, thetas, ctrl_idx, dt, pi_s, pi_m, pi_a, gamma,
              eta_s, eta_m, eta_a, tau_s, tau_o, rho, sigma,
              neg_tol, sum_tol):
    ng = thetas.shape[1]
    nx = 11 * ng
    n_steps = ctrl_idx.shape[0]
    states = np.empty((n_steps + 1, nx))
    states[0] = x0
    beta_mats = np.asarray(betas).reshape(-1, ng, ng)
    half = 0.5 * dt
    sixth = dt / 6.0
    k1 = np.empty((ng, 11))
    k2 = np.empty((ng, 11))
    k3 = np.empty((ng, 11))
    k4 = np.empty((ng, 11))

    args = (pi_s, pi_m, pi_a, gamma, eta_s, eta_m, eta_a,
            tau_s, tau_o, rho, sigma)
    fail = (-1, -1, 0, 0.0)
    for k in range(n_steps):
        c = ctrl_idx[k]
        beta = beta_mats[c]
        theta = thetas[c]
        xk = states[k].reshape(ng, 11)
        _eval_rhs(xk, beta, theta, *args, out=k1)
        _eval_rhs(xk + half * k1, beta, theta, *args, out=k2)
        _eval_rhs(xk + half * k2, beta, theta, *args, out=k3)
        _eval_rhs(xk + dt * k3, beta, theta, *args, out=k4)
        nxt = xk + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[k + 1] = nxt.reshape(-1)
        flat = states[k + 1]
        imin = int(np.argmin(flat))
        if flat[imin] < -neg_tol:
            fail = (k + 1, imin, 1, float(flat[imin]))
            break
        total = float(flat.sum())
        if abs(total - 1.0) > sum_tol:
            fail = (k + 1, -1, 2, total)
            break

    fail_step, fail_entry, fail_kind, fail_value = fail
    if fail_kind != 0:
        states = states[:fail_step + 1]
    return states, fail_step, fail_entry, fail_kind, fail_value
