# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gate-train kernel; mirrors ``_kernel_py`` operation for operation."""
import numpy as np

from libc.math cimport exp, log

cdef double TIME_EPS = 1e-13
cdef double TRAP_MAX = 1.0 - 1e-12


def simulate_block(
    const double[::1] starts, const long long[::1] bins, const double[::1] h_sig, double h_dark,
    const double[::1] h_pers,
    double width, double period, long long first_pulse, double dead_time,
    double a0, double tau_trap, double m,
    const double[:, ::1] u, double[::1] state,
    long long[::1] applied, long long[::1] activated, long long[::1] detected, long long[:, ::1] causes,
):
    cdef Py_ssize_t n_pulses = u.shape[0]
    cdef Py_ssize_t n_gates = u.shape[1]
    cdef Py_ssize_t p, k
    cdef long long b
    cdef double trap_value = state[0]
    cdef double trap_time = state[1]
    cdef double dead_until = state[2]
    cdef double t0, g, trap, h_ap, hs, total, p_det, uu, v, t_end

    with nogil:
        for p in range(n_pulses):
            t0 = (first_pulse + p) * period
            for k in range(n_gates):
                b = bins[k]
                applied[b] += 1
                g = t0 + starts[k]
                if g + TIME_EPS < dead_until:
                    continue
                activated[b] += 1
                h_ap = 0.0
                if a0 > 0.0:
                    trap = trap_value * exp(-(g - trap_time) / tau_trap)
                    if trap > 0.0:
                        if trap > TRAP_MAX:
                            trap = TRAP_MAX
                        h_ap = -m * log(1.0 - trap)
                hs = h_sig[k]
                total = hs + h_dark + h_ap + h_pers[k]
                if total <= 0.0:
                    continue
                p_det = 1.0 - exp(-total)
                uu = u[p, k]
                if uu >= p_det:
                    continue
                detected[b] += 1
                v = uu / p_det * total
                if v < hs:
                    causes[b, 0] += 1
                elif v < hs + h_dark:
                    causes[b, 1] += 1
                elif v < hs + h_dark + h_ap:
                    causes[b, 2] += 1
                else:
                    causes[b, 3] += 1
                t_end = g + width
                if a0 > 0.0:
                    trap_value = trap_value * exp(-(t_end - trap_time) / tau_trap) + a0
                    trap_time = t_end
                dead_until = t_end + dead_time

    state[0] = trap_value
    state[1] = trap_time
    state[2] = dead_until


def decay_accumulate(const double[::1] decay, const double[::1] gain, double x0):
    cdef Py_ssize_t n = decay.shape[0]
    cdef Py_ssize_t i
    out = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] o = out
    cdef double x = x0
    o[0] = x
    with nogil:
        for i in range(n):
            x = decay[i] * x + gain[i]
            o[i + 1] = x
    return out
