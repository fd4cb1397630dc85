"""Geiger-mode APD statistics.

Per-gate detection probability, afterpulse probability for arbitrary gate
widths, single-gate Monte Carlo sampling with trap and charge-persistence
state, and inversion of counts back to optical power.

Hazards from signal, dark counts, afterpulsing and charge persistence are
treated as independent Poisson processes and summed inside one exponential,
so that with the extra hazards switched off the detection probability is
exactly ``1 - exp(-eta * mu * dt)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import SaturationError, ScheduleError, ValidityWarning
from .units import DEFAULT_WAVELENGTH_M, REFERENCE_GATE_S, photon_energy

# Keeps log(1 - p) finite when accumulated trap populations exceed unity.
TRAP_MAX = 1.0 - 1e-12
# Timing slack when comparing gate starts with dead-time ends, seconds.
TIME_EPS = 1e-13

CAUSES = ("signal", "dark", "afterpulse", "persistence")


@dataclass(frozen=True)
class Afterpulsing:
    """Single-exponential trap model.

    ``a0`` is the afterpulse probability in a 10 ns gate opened right after
    the avalanche; it decays with e-folding time ``tau_trap_s``. Both are
    calibration knobs, not measured constants.
    """

    a0: float = 0.1
    tau_trap_s: float = 2e-6

    def __post_init__(self):
        if not 0 <= self.a0 < 1:
            raise ValueError(f"afterpulse amplitude must lie in [0, 1), got {self.a0}")
        if not self.tau_trap_s > 0:
            raise ValueError("trap lifetime must be > 0")


@dataclass(frozen=True)
class Persistence:
    """Phenomenological charge persistence.

    Photons hitting the diode while it is below breakdown add
    ``kappa`` per photon to an excess per-10-ns avalanche probability that
    relaxes at rate ``gamma_hz``. Defaults reproduce a tail about 10 dB
    (trace scale) under the pre-loss level after a 17 dB drop, fading at a
    few dB/km and merging with the backscatter after roughly 2 km.
    """

    kappa: float = 7.4e-7
    gamma_hz: float = 1.93e5

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError("persistence coupling must be >= 0")
        if not self.gamma_hz >= 0:
            raise ValueError("persistence decay rate must be >= 0")


@dataclass(frozen=True)
class ApdModel:
    efficiency: float = 0.1
    dark_rate_hz: float = 2000.0
    afterpulse: Afterpulsing = field(default_factory=Afterpulsing)
    persistence: Persistence = field(default_factory=Persistence)
    dead_time_s: float = 10e-6
    wavelength_m: float = DEFAULT_WAVELENGTH_M

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"efficiency must lie in (0, 1], got {self.efficiency}")
        if not self.dark_rate_hz >= 0:
            raise ValueError("dark count rate must be >= 0")
        if not self.dead_time_s >= 0:
            raise ValueError("dead time must be >= 0")

    @property
    def photon_energy(self) -> float:
        return photon_energy(self.wavelength_m)

    def photon_rate(self, power_w):
        return np.asarray(power_w, dtype=float) / self.photon_energy

    def signal_hazard(self, power_w, gate_width_s: float):
        """Mean number of detected photons in one gate, eta * mu * dt."""
        return self.efficiency * self.photon_rate(power_w) * gate_width_s

    def dark_hazard(self, gate_width_s: float) -> float:
        return self.dark_rate_hz * gate_width_s


@dataclass
class ApdState:
    """Mutable state of one detector timeline.

    ``trap_excess`` is the per-10-ns afterpulse probability as of
    ``trap_time``; ``persistence_excess`` likewise as of ``clock``.
    """

    trap_excess: float = 0.0
    trap_time: float = 0.0
    persistence_excess: float = 0.0
    clock: float = 0.0
    dead_until: float = -math.inf

    def trap_at(self, apd: ApdModel, t: float) -> float:
        if self.trap_excess == 0.0:
            return 0.0
        return self.trap_excess * math.exp(-(t - self.trap_time) / apd.afterpulse.tau_trap_s)

    def persistence_at(self, apd: ApdModel, t: float) -> float:
        if self.persistence_excess == 0.0:
            return 0.0
        return self.persistence_excess * math.exp(-apd.persistence.gamma_hz * (t - self.clock))


@dataclass(frozen=True)
class GateOutcome:
    detected: bool
    cause: str | None = None

    def __post_init__(self):
        if self.detected != (self.cause is not None):
            raise ValueError("cause must be given exactly for detections")


@dataclass(frozen=True)
class PowerEstimate:
    power_w: float
    low_w: float
    high_w: float

    @property
    def interval(self) -> tuple[float, float]:
        return (self.low_w, self.high_w)


def detection_probability(apd: ApdModel, power_w, gate_width_s: float, linearized: bool = False):
    """Probability that a gate fires on signal photons alone."""
    p = np.asarray(power_w, dtype=float)
    if np.any(p < 0):
        raise ValueError("optical power must be >= 0")
    if not gate_width_s > 0:
        raise ValueError("gate width must be > 0")
    x = apd.signal_hazard(p, gate_width_s)
    out = x if linearized else -np.expm1(-x)
    return out[()] if np.ndim(out) == 0 else out


def power_from_probability(apd: ApdModel, p_sig, gate_width_s: float):
    """Invert ``1 - exp(-eta P dt / h nu)`` for the power."""
    return -apd.photon_energy / (apd.efficiency * gate_width_s) * np.log1p(-np.asarray(p_sig, dtype=float))


def estimate_power(
    apd: ApdModel,
    n_det: int,
    n_dc_expected: float,
    n_gate: int,
    gate_width_s: float,
    n_sigma: float = 1.0,
) -> PowerEstimate:
    """Power estimate from counts, with a Poisson interval.

    The interval propagates ``p +- n_sigma * sqrt(N_det) / N_gate`` through
    the same inversion; the lower end is clamped at zero and the upper end
    becomes ``inf`` once it reaches certainty.
    """
    if n_gate < 1:
        raise ValueError("need at least one activated gate")
    if not 0 <= n_det <= n_gate:
        raise ValueError(f"detections ({n_det}) must lie in [0, N_gate={n_gate}]")
    if n_det == n_gate:
        raise SaturationError(f"all {n_gate} gates fired")

    def invert(p: float) -> float:
        if p >= 1.0:
            return math.inf
        return float(power_from_probability(apd, min(max(p, 0.0), 1.0), gate_width_s))

    p = (n_det - n_dc_expected) / n_gate
    sigma = n_sigma * math.sqrt(n_det) / n_gate
    return PowerEstimate(invert(p), invert(p - sigma), invert(p + sigma))


def afterpulse_probability_gate(apd: ApdModel, dead_time_s: float, gate_width_s: float):
    """Afterpulse probability of a gate opened ``dead_time_s`` after an
    avalanche, scaling the 10 ns value to the actual gate width."""
    if np.any(np.asarray(dead_time_s) < 0):
        raise ValueError("dead time must be >= 0")
    if gate_width_s > 10e-6:
        warnings.warn(
            f"gate width {gate_width_s:g} s exceeds the 10 us validity of the gate-width scaling",
            ValidityWarning,
            stacklevel=2,
        )
    ap = apd.afterpulse
    p10 = ap.a0 * np.exp(-np.asarray(dead_time_s, dtype=float) / ap.tau_trap_s)
    m = gate_width_s / REFERENCE_GATE_S
    out = 1.0 - (1.0 - p10) ** m
    return out[()] if np.ndim(out) == 0 else out


def excess_hazard(p10: float, m: float) -> float:
    """Hazard of a per-10-ns excess probability spread over ``m`` units."""
    if p10 <= 0.0:
        return 0.0
    if p10 > TRAP_MAX:
        p10 = TRAP_MAX
    return -m * math.log(1.0 - p10)


def accumulate_persistence(apd: ApdModel, state: ApdState, power_off_w: float, duration_s: float) -> ApdState:
    """Integrate sub-breakdown illumination over ``[clock, clock + duration]``.

    Exact solution of ``dx/dt = kappa * mu - gamma * x`` for constant power.
    """
    if duration_s < 0:
        raise ValueError("duration must be >= 0")
    pers = apd.persistence
    source = pers.kappa * power_off_w / apd.photon_energy
    if pers.gamma_hz > 0:
        decay = math.exp(-pers.gamma_hz * duration_s)
        gain = source * -math.expm1(-pers.gamma_hz * duration_s) / pers.gamma_hz
    else:
        decay, gain = 1.0, source * duration_s
    state.persistence_excess = state.persistence_excess * decay + gain
    state.clock += duration_s
    return state


def sample_gate(
    apd: ApdModel,
    state: ApdState,
    power_w: float,
    gate_start_s: float,
    gate_width_s: float,
    rng,
    dead_time_s: float | None = None,
    afterpulse_a0: float | None = None,
) -> GateOutcome:
    """Draw one gate and update ``state`` in place.

    Consumes exactly one uniform from ``rng``; the cause is recovered from
    the same draw so that the Monte Carlo kernels stay in lock-step with this
    function.
    """
    if gate_start_s + TIME_EPS < state.dead_until:
        raise ScheduleError(f"gate at {gate_start_s:g} s falls in dead time until {state.dead_until:g} s")
    if power_w < 0:
        raise ValueError("optical power must be >= 0")
    tau = apd.dead_time_s if dead_time_s is None else dead_time_s
    a0 = apd.afterpulse.a0 if afterpulse_a0 is None else afterpulse_a0
    m = gate_width_s / REFERENCE_GATE_S

    h_sig = apd.efficiency * (power_w / apd.photon_energy) * gate_width_s
    h_dark = apd.dark_rate_hz * gate_width_s
    h_ap = excess_hazard(state.trap_at(apd, gate_start_s), m) if a0 > 0.0 else 0.0
    h_cp = excess_hazard(state.persistence_at(apd, gate_start_s), m)
    total = h_sig + h_dark + h_ap + h_cp

    gate_end = gate_start_s + gate_width_s
    state.persistence_excess = state.persistence_at(apd, gate_end)
    state.clock = gate_end
    u = rng.random()
    if total <= 0.0:
        return GateOutcome(False)
    p_det = 1.0 - math.exp(-total)
    if u >= p_det:
        return GateOutcome(False)

    v = u / p_det * total
    if v < h_sig:
        cause = "signal"
    elif v < h_sig + h_dark:
        cause = "dark"
    elif v < h_sig + h_dark + h_ap:
        cause = "afterpulse"
    else:
        cause = "persistence"
    if a0 > 0.0:
        state.trap_excess = state.trap_at(apd, gate_end) + a0
        state.trap_time = gate_end
    state.dead_until = gate_end + tau
    return GateOutcome(True, cause)
