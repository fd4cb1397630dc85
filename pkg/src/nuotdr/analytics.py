"""Closed-form performance predictors for a photon-counting OTDR.

NEP (per measurement and bandwidth normalized), dynamic range, the
2-point-resolution advantage, SNR versus measurement time, and the
conventional/photon-counting time ratio. Conventional receivers enter only
as a scalar bandwidth-normalized NEP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import ApdModel
from .fiber import FiberSegment, LaserConfig
from .units import DEFAULT_GROUP_SPEED_KM_S, DEFAULT_WAVELENGTH_M, photon_energy


@dataclass(frozen=True)
class NepInput:
    efficiency: float
    p_sig_gate: float
    p_dc_gate: float
    n_gate: float
    gate_width_s: float
    wavelength_m: float = DEFAULT_WAVELENGTH_M

    @property
    def photon_energy(self) -> float:
        return photon_energy(self.wavelength_m)

    @property
    def p_hat_sig(self) -> float:
        return self.p_sig_gate / self.gate_width_s

    @property
    def p_hat_dc(self) -> float:
        return self.p_dc_gate / self.gate_width_s

    @property
    def bandwidth_hz(self) -> float:
        return 1.0 / (2.0 * self.gate_width_s)

    @classmethod
    def from_rates(cls, efficiency, p_hat_sig, p_hat_dc, gate_width_s, n_gate=1, wavelength_m=DEFAULT_WAVELENGTH_M):
        return cls(efficiency, p_hat_sig * gate_width_s, p_hat_dc * gate_width_s, n_gate, gate_width_s, wavelength_m)


@dataclass(frozen=True)
class ConventionalDetector:
    """Linear-mode OTDR receiver summarized by its normalized NEP (W/sqrt(Hz))."""

    nep_norm: float

    def __post_init__(self):
        if not self.nep_norm > 0:
            raise ValueError("conventional NEP must be > 0")


def _check_gates(inp: NepInput) -> None:
    if inp.n_gate < 1:
        raise ValueError("N_gate must be >= 1")


def nep(inp: NepInput) -> float:
    """Noise equivalent power of one measurement of ``n_gate`` gates, W."""
    _check_gates(inp)
    return inp.photon_energy / inp.efficiency * math.sqrt(
        (inp.p_sig_gate + inp.p_dc_gate) / (inp.n_gate * inp.gate_width_s**2)
    )


def nep0(inp: NepInput) -> float:
    """Minimal detectable power (signal shot noise dropped), W."""
    _check_gates(inp)
    return inp.photon_energy / inp.efficiency * math.sqrt(inp.p_dc_gate / (inp.n_gate * inp.gate_width_s**2))


def nep_norm_rates(efficiency: float, p_hat_sig: float, p_hat_dc: float, wavelength_m: float = DEFAULT_WAVELENGTH_M) -> float:
    if min(p_hat_sig, p_hat_dc) < 0:
        raise ValueError("rates must be >= 0")
    return photon_energy(wavelength_m) / efficiency * math.sqrt(2.0 * (p_hat_sig + p_hat_dc))


def nep_norm(inp: NepInput) -> float:
    """Bandwidth-normalized NEP, W/sqrt(Hz)."""
    return nep_norm_rates(inp.efficiency, inp.p_hat_sig, inp.p_hat_dc, inp.wavelength_m)


def nep_norm0(inp: NepInput) -> float:
    return nep_norm_rates(inp.efficiency, 0.0, inp.p_hat_dc, inp.wavelength_m)


def nep_norm_at_power(apd: ApdModel, power_w: float, gate_width_s: float | None = None) -> float:
    """Normalized NEP at incident ``power_w`` in the linear regime
    (``p_hat_sig = eta * mu``). With ``gate_width_s`` the saturating form
    ``(1 - exp(-eta mu dt)) / dt`` is used instead."""
    mu = power_w / apd.photon_energy
    if gate_width_s is None:
        p_hat_sig = apd.efficiency * mu
    else:
        p_hat_sig = -math.expm1(-apd.efficiency * mu * gate_width_s) / gate_width_s
    return nep_norm_rates(apd.efficiency, p_hat_sig, apd.dark_rate_hz, apd.wavelength_m)


def nep_norm0_table(efficiency: float, dark_rates_hz, wavelength_m: float = DEFAULT_WAVELENGTH_M) -> np.ndarray:
    """Dark-limited normalized NEP for a user-supplied table of dark rates
    (e.g. one entry per operating temperature)."""
    rates = np.asarray(dark_rates_hz, dtype=float)
    if np.any(rates < 0):
        raise ValueError("dark rates must be >= 0")
    return photon_energy(wavelength_m) / efficiency * np.sqrt(2.0 * rates)


def dynamic_range(p_bs0_w: float, nep0_w: float) -> float:
    """``5 log10(P_BS0 / NEP0)`` in trace dB (factor 5: round trip)."""
    if not (p_bs0_w > 0 and nep0_w > 0):
        raise ValueError("powers must be > 0")
    return 5.0 * math.log10(p_bs0_w / nep0_w)


def initial_backscatter(segment: FiberSegment, laser: LaserConfig, group_speed_km_s: float = DEFAULT_GROUP_SPEED_KM_S, exact: bool = False) -> float:
    """Strongest backscatter, from the first half pulse length, W."""
    x = segment.alpha_s_per_km * group_speed_km_s * laser.pulse_width_s
    factor = -math.expm1(-x) if exact else x
    return segment.capture_ratio * laser.peak_power_w * factor


def dynamic_range_for(
    segment: FiberSegment,
    laser: LaserConfig,
    apd: ApdModel,
    measurement_time_s: float,
    gate_width_s: float | None = None,
    group_speed_km_s: float = DEFAULT_GROUP_SPEED_KM_S,
) -> float:
    """Dynamic range of a basic-mode measurement with ``f_pulse * t`` gates
    per point; the gate width defaults to the pulse width."""
    dt = laser.pulse_width_s if gate_width_s is None else gate_width_s
    inp = NepInput(
        apd.efficiency, 0.0, apd.dark_rate_hz * dt, laser.repetition_hz * measurement_time_s, dt, apd.wavelength_m
    )
    return dynamic_range(initial_backscatter(segment, laser, group_speed_km_s), nep0(inp))


def two_point_advantage(x_db: float) -> float:
    """Pulse-width factor that spends an ``x_db`` dynamic-range surplus."""
    if x_db < 0:
        raise ValueError("advantage must be >= 0 dB")
    return 10.0 ** (-2.0 * x_db / 15.0)


def measurement_time(snr_target: float, nep_norm_w: float, bandwidth_hz: float, power_w: float, f_pulse_hz: float) -> float:
    """Time to reach ``snr_target`` at one delay position, s (linear regime)."""
    if min(snr_target, nep_norm_w, bandwidth_hz, power_w, f_pulse_hz) <= 0:
        raise ValueError("all arguments must be > 0")
    return (snr_target * nep_norm_w * math.sqrt(bandwidth_hz) / power_w) ** 2 / f_pulse_hz


def snr(
    power_w: float,
    time_s: float,
    f_pulse_hz: float,
    nep_norm_w: float,
    bandwidth_hz: float,
    exact: bool = False,
    efficiency: float | None = None,
    wavelength_m: float = DEFAULT_WAVELENGTH_M,
) -> float:
    """Signal-to-noise ratio after ``time_s``.

    The default is the linearized form. ``exact=True`` keeps the saturating
    detection probability and needs ``efficiency``.
    """
    if time_s < 0:
        raise ValueError("time must be >= 0")
    if not exact:
        return power_w * math.sqrt(f_pulse_hz * time_s) / (nep_norm_w * math.sqrt(bandwidth_hz))
    if efficiency is None:
        raise ValueError("exact SNR needs the detection efficiency")
    hnu = photon_energy(wavelength_m)
    dt = 1.0 / (2.0 * bandwidth_hz)
    p_sig = -math.expm1(-efficiency * power_w * dt / hnu)
    return math.sqrt(2.0) * hnu / efficiency * p_sig * math.sqrt(f_pulse_hz * time_s) / (nep_norm_w * math.sqrt(dt))


def time_ratio(conv: ConventionalDetector, pc_nep_norm: float) -> float:
    """Conventional over photon-counting measurement time at equal power,
    bandwidth and repetition rate."""
    if not pc_nep_norm > 0:
        raise ValueError("photon-counting NEP must be > 0")
    return (conv.nep_norm / pc_nep_norm) ** 2
