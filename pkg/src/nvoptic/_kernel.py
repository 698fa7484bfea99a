"""Compiled fixed-step RK4 loop for batches of density matrices.

Runs are integrated one after another, each entirely independently, so a
run's result is bitwise identical whatever batch it is placed in.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_TRACE = 1
STATUS_NONFINITE = 2


@njit(cache=True, nogil=True)
def _assemble(h, h0, ent_k, ent_i, ent_j, ent_v, coeff):
    n = h0.shape[0]
    for a in range(n):
        for b in range(n):
            h[a, b] = h0[a, b]
    for e in range(ent_k.shape[0]):
        h[ent_i[e], ent_j[e]] += coeff[ent_k[e]] * ent_v[e]


@njit(cache=True, nogil=True)
def _deriv(rho, h, rec_oi, rec_oj, rec_ii, rec_ij, rec_v, out):
    # out = -i (H rho - rho H^dag) + sum_c gamma J rho J^dag
    n = rho.shape[0]
    for a in range(n):
        for b in range(n):
            acc = 0j
            for c in range(n):
                acc += h[a, c] * rho[c, b] - rho[a, c] * np.conj(h[b, c])
            out[a, b] = -1j * acc
    for e in range(rec_v.shape[0]):
        out[rec_oi[e], rec_oj[e]] += rec_v[e] * rho[rec_ii[e], rec_ij[e]]


@njit(cache=True, nogil=True)
def _coefficients(coeff, r, t, step, mod_amp, mod_freq, mod_noise, noise):
    for k in range(coeff.shape[0]):
        c = mod_amp[k, r]
        if mod_freq[k] != 0.0:
            c = c * np.exp(1j * mod_freq[k] * t)
        idx = mod_noise[k]
        if idx >= 0:
            c = c * noise[idx, r, step]
        coeff[k] = c


@njit(cache=True, nogil=True)
def rk4_batch(rho0, h0, rec_oi, rec_oj, rec_ii, rec_ij, rec_v,
              ent_k, ent_i, ent_j, ent_v, mod_amp, mod_freq, mod_noise, noise,
              dt, n_steps, stride, obs, trace_tol,
              records, final, herm_dev, trace_dev, status, fail_step):
    n_runs = rho0.shape[0]
    n = rho0.shape[1]
    n_mod = mod_amp.shape[0]
    n_obs = obs.shape[0]
    h = np.empty((n, n), dtype=np.complex128)
    coeff = np.empty(n_mod, dtype=np.complex128)
    k1 = np.empty((n, n), dtype=np.complex128)
    k2 = np.empty((n, n), dtype=np.complex128)
    k3 = np.empty((n, n), dtype=np.complex128)
    k4 = np.empty((n, n), dtype=np.complex128)
    tmp = np.empty((n, n), dtype=np.complex128)
    half = 0.5 * dt
    sixth = dt / 6.0
    for r in range(n_runs):
        rho = rho0[r].copy()
        status[r] = STATUS_OK
        fail_step[r] = -1
        herm_dev[r] = 0.0
        trace_dev[r] = 0.0
        for m in range(n_obs):
            acc = 0j
            for a in range(n):
                for b in range(n):
                    acc += rho[a, b] * obs[m, b, a]
            records[r, 0, m] = acc
        rec = 1
        for s in range(n_steps):
            t = s * dt
            _coefficients(coeff, r, t, s, mod_amp, mod_freq, mod_noise, noise)
            _assemble(h, h0, ent_k, ent_i, ent_j, ent_v, coeff)
            _deriv(rho, h, rec_oi, rec_oj, rec_ii, rec_ij, rec_v, k1)
            _coefficients(coeff, r, t + half, s, mod_amp, mod_freq, mod_noise, noise)
            _assemble(h, h0, ent_k, ent_i, ent_j, ent_v, coeff)
            for a in range(n):
                for b in range(n):
                    tmp[a, b] = rho[a, b] + half * k1[a, b]
            _deriv(tmp, h, rec_oi, rec_oj, rec_ii, rec_ij, rec_v, k2)
            for a in range(n):
                for b in range(n):
                    tmp[a, b] = rho[a, b] + half * k2[a, b]
            _deriv(tmp, h, rec_oi, rec_oj, rec_ii, rec_ij, rec_v, k3)
            _coefficients(coeff, r, t + dt, s, mod_amp, mod_freq, mod_noise, noise)
            _assemble(h, h0, ent_k, ent_i, ent_j, ent_v, coeff)
            for a in range(n):
                for b in range(n):
                    tmp[a, b] = rho[a, b] + dt * k3[a, b]
            _deriv(tmp, h, rec_oi, rec_oj, rec_ii, rec_ij, rec_v, k4)
            dev = 0.0
            for a in range(n):
                for b in range(n):
                    rho[a, b] += sixth * (k1[a, b] + 2.0 * k2[a, b] + 2.0 * k3[a, b] + k4[a, b])
            # symmetrize, tracking how far the step drifted from Hermitian
            for a in range(n):
                for b in range(a, n):
                    x = rho[a, b]
                    y = np.conj(rho[b, a])
                    d = abs(x - y)
                    if d > dev:
                        dev = d
                    avg = 0.5 * (x + y)
                    rho[a, b] = avg
                    rho[b, a] = np.conj(avg)
            if dev > herm_dev[r]:
                herm_dev[r] = dev
            if (s + 1) % stride == 0:
                tr = 0j
                for a in range(n):
                    tr += rho[a, a]
                err = abs(tr - 1.0)
                if err > trace_dev[r]:
                    trace_dev[r] = err
                if not np.isfinite(err):
                    status[r] = STATUS_NONFINITE
                    fail_step[r] = s + 1
                    break
                if err > trace_tol:
                    status[r] = STATUS_TRACE
                    fail_step[r] = s + 1
                    break
                for m in range(n_obs):
                    acc = 0j
                    for a in range(n):
                        for b in range(n):
                            acc += rho[a, b] * obs[m, b, a]
                    records[r, rec, m] = acc
                rec += 1
        for a in range(n):
            for b in range(n):
                final[r, a, b] = rho[a, b]
