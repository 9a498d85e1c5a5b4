# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fixed-step RK4 core for the age-stratified compartment dynamics.

States are flattened group-major: entry ``g * 11 + c`` is compartment ``c``
of age group ``g`` with the compartment layout

    0=S 1=E 2=IS 3=IM 4=IA 5=TS 6=TO 7=P 8=HICU 9=RU 10=RK

The integrator is deliberately minimal: piecewise-constant controls indexed
per step, classical RK4, on-the-fly admissibility checks. Everything else
(derived series, validation objects, policies) lives in Python.
"""

import numpy as np

BACKEND = "compiled"


cdef void _eval_rhs(int ng, const double* x,
                    const double* beta, const double* theta,
                    const double* pi_s, const double* pi_m, const double* pi_a,
                    double gamma, double eta_s, double eta_m, double eta_a,
                    double tau_s, double tau_o, double rho, double sigma,
                    double* out) noexcept nogil:
    cdef int i, j, b
    cdef double force, einc, eout
    for i in range(ng):
        force = 0.0
        for j in range(ng):
            b = j * 11
            force = force + beta[i * ng + j] * (
                x[b + 2] + x[b + 3] + x[b + 4] + x[b + 5] + x[b + 6])
        b = i * 11
        einc = force * x[b + 0]
        eout = gamma * x[b + 1]
        out[b + 0] = -einc
        out[b + 1] = einc - eout
        out[b + 2] = pi_s[i] * eout - (eta_s + theta[i]) * x[b + 2]
        out[b + 3] = pi_m[i] * eout - (eta_m + theta[i]) * x[b + 3]
        out[b + 4] = pi_a[i] * eout - (eta_a + theta[i]) * x[b + 4]
        out[b + 5] = theta[i] * x[b + 2] - tau_s * x[b + 5]
        out[b + 6] = theta[i] * (x[b + 3] + x[b + 4]) - tau_o * x[b + 6]
        out[b + 7] = eta_s * x[b + 2] + tau_s * x[b + 5] - rho * x[b + 7]
        out[b + 8] = rho * x[b + 7] - sigma * x[b + 8]
        out[b + 9] = eta_a * x[b + 4]
        out[b + 10] = eta_m * x[b + 3] + tau_o * x[b + 6] + sigma * x[b + 8]


def rhs(const double[::1] x, const double[::1] beta, const double[::1] theta,
        const double[::1] pi_s, const double[::1] pi_m, const double[::1] pi_a,
        double gamma, double eta_s, double eta_m, double eta_a,
        double tau_s, double tau_o, double rho, double sigma):
    """Single vector-field evaluation on a flattened state."""
    cdef int ng = theta.shape[0]
    out = np.empty(11 * ng, dtype=np.float64)
    cdef double[::1] o = out
    _eval_rhs(ng, &x[0], &beta[0], &theta[0], &pi_s[0], &pi_m[0], &pi_a[0],
              gamma, eta_s, eta_m, eta_a, tau_s, tau_o, rho, sigma, &o[0])
    return out


def integrate(const double[::1] x0, const double[:, ::1] betas,
              const double[:, ::1] thetas,
              const int[::1] ctrl_idx, double dt,
              const double[::1] pi_s, const double[::1] pi_m,
              const double[::1] pi_a,
              double gamma, double eta_s, double eta_m, double eta_a,
              double tau_s, double tau_o, double rho, double sigma,
              double neg_tol, double sum_tol):
    """RK4 integration under per-step piecewise-constant controls.

    ``ctrl_idx[k]`` selects the row of ``betas``/``thetas`` active on step k.
    Returns ``(states, fail_step, fail_entry, fail_kind, fail_value)`` where
    ``states`` has shape ``(n_steps + 1, 11 * ng)``. ``fail_kind`` is 0 on
    success, 1 for a negativity violation, 2 for a simplex violation; on
    failure the offending state is the one at index ``fail_step``.
    """
    cdef int ng = thetas.shape[1]
    cdef int nx = 11 * ng
    cdef int n_steps = ctrl_idx.shape[0]
    states = np.empty((n_steps + 1, nx), dtype=np.float64)
    cdef double[:, ::1] s = states
    work = np.empty((5, nx), dtype=np.float64)
    cdef double[:, ::1] w = work

    cdef int k, i, c
    cdef double total, half = 0.5 * dt, sixth = dt / 6.0
    cdef const double* beta
    cdef const double* theta
    cdef int fail_step = -1, fail_entry = -1, fail_kind = 0
    cdef double fail_value = 0.0

    for i in range(nx):
        s[0, i] = x0[i]

    with nogil:
        for k in range(n_steps):
            c = ctrl_idx[k]
            beta = &betas[c, 0]
            theta = &thetas[c, 0]
            _eval_rhs(ng, &s[k, 0], beta, theta, &pi_s[0], &pi_m[0], &pi_a[0],
                      gamma, eta_s, eta_m, eta_a, tau_s, tau_o, rho, sigma,
                      &w[0, 0])
            for i in range(nx):
                w[4, i] = s[k, i] + half * w[0, i]
            _eval_rhs(ng, &w[4, 0], beta, theta, &pi_s[0], &pi_m[0], &pi_a[0],
                      gamma, eta_s, eta_m, eta_a, tau_s, tau_o, rho, sigma,
                      &w[1, 0])
            for i in range(nx):
                w[4, i] = s[k, i] + half * w[1, i]
            _eval_rhs(ng, &w[4, 0], beta, theta, &pi_s[0], &pi_m[0], &pi_a[0],
                      gamma, eta_s, eta_m, eta_a, tau_s, tau_o, rho, sigma,
                      &w[2, 0])
            for i in range(nx):
                w[4, i] = s[k, i] + dt * w[2, i]
            _eval_rhs(ng, &w[4, 0], beta, theta, &pi_s[0], &pi_m[0], &pi_a[0],
                      gamma, eta_s, eta_m, eta_a, tau_s, tau_o, rho, sigma,
                      &w[3, 0])
            total = 0.0
            for i in range(nx):
                s[k + 1, i] = s[k, i] + sixth * (
                    w[0, i] + 2.0 * w[1, i] + 2.0 * w[2, i] + w[3, i])
                total = total + s[k + 1, i]
                if s[k + 1, i] < -neg_tol and fail_kind == 0:
                    fail_step = k + 1
                    fail_entry = i
                    fail_kind = 1
                    fail_value = s[k + 1, i]
            if fail_kind == 0 and (total - 1.0 > sum_tol or 1.0 - total > sum_tol):
                fail_step = k + 1
                fail_entry = -1
                fail_kind = 2
                fail_value = total
            if fail_kind != 0:
                break

    if fail_kind != 0:
        states = states[:fail_step + 1]
    return states, fail_step, fail_entry, fail_kind, fail_value
