"""Pure-Python gate-train kernel.

Reference implementation and import-time fallback for ``_kernel.pyx``. Both
perform the same floating-point operations in the same order, so given the
same uniforms they produce identical counts.
"""
from __future__ import annotations

from math import exp, log

TIME_EPS = 1e-13
TRAP_MAX = 1.0 - 1e-12


def simulate_block(
    starts, bins, h_sig, h_dark, h_pers,
    width, period, first_pulse, dead_time,
    a0, tau_trap, m,
    u, state,
    applied, activated, detected, causes,
):
    """Run ``u.shape[0]`` pulses through one gate timeline.

    ``state`` is ``[trap_value, trap_time, dead_until]`` and is updated in
    place, as are the per-bin count arrays.
    """
    n_pulses, n_gates = u.shape
    starts_l = starts.tolist()
    bins_l = bins.tolist()
    hs_l = h_sig.tolist()
    hp_l = h_pers.tolist()
    trap_value, trap_time, dead_until = float(state[0]), float(state[1]), float(state[2])

    app = [0] * len(applied)
    act = [0] * len(applied)
    det = [0] * len(applied)
    cau = [[0, 0, 0, 0] for _ in range(len(applied))]

    for p in range(n_pulses):
        t0 = (first_pulse + p) * period
        row = u[p].tolist()
        for k in range(n_gates):
            b = bins_l[k]
            app[b] += 1
            g = t0 + starts_l[k]
            if g + TIME_EPS < dead_until:
                continue
            act[b] += 1
            h_ap = 0.0
            if a0 > 0.0:
                trap = trap_value * exp(-(g - trap_time) / tau_trap)
                if trap > 0.0:
                    if trap > TRAP_MAX:
                        trap = TRAP_MAX
                    h_ap = -m * log(1.0 - trap)
            hs = hs_l[k]
            total = hs + h_dark + h_ap + hp_l[k]
            if total <= 0.0:
                continue
            p_det = 1.0 - exp(-total)
            uu = row[k]
            if uu >= p_det:
                continue
            det[b] += 1
            v = uu / p_det * total
            if v < hs:
                cau[b][0] += 1
            elif v < hs + h_dark:
                cau[b][1] += 1
            elif v < hs + h_dark + h_ap:
                cau[b][2] += 1
            else:
                cau[b][3] += 1
            t_end = g + width
            if a0 > 0.0:
                trap_value = trap_value * exp(-(t_end - trap_time) / tau_trap) + a0
                trap_time = t_end
            dead_until = t_end + dead_time

    for b in range(len(applied)):
        applied[b] += app[b]
        activated[b] += act[b]
        detected[b] += det[b]
        for c in range(4):
            causes[b, c] += cau[b][c]
    state[0] = trap_value
    state[1] = trap_time
    state[2] = dead_until


def decay_accumulate(decay, gain, x0):
    """``x[i+1] = decay[i] * x[i] + gain[i]``; returns ``x[0..n]``."""
    out = [x0]
    x = x0
    for a, g in zip(decay.tolist(), gain.tolist()):
        x = a * x + g
        out.append(x)
    return out
