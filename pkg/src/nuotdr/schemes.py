"""Gate schedules for the four bias schemes, and the train-of-gates planner.

A schedule is a set of *timelines*. Each timeline is the list of gate
starts applied after every laser pulse by one detector whose state carries
from gate to gate (and pulse to pulse). Basic mode has one single-gate
timeline per delay point; a train of gates has one timeline per start-delay
shift; free-running and rapid gating have a single dense timeline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detector import ApdModel
from .errors import ScheduleError
from .fiber import FiberLink, LaserConfig, check_repetition
from .units import photon_energy as photon_energy_of

_REL = 1e-9


@dataclass(frozen=True)
class Basic:
    """One gate per laser pulse, delay stepped point by point."""

    delay_step_s: float
    gate_width_s: float
    dead_time_s: float | None = None
    gates_per_point: int | None = None  # overrides duration * f_pulse
    window_start_s: float = 0.0
    window_stop_s: float | None = None
    name = "basic"


@dataclass(frozen=True)
class TrainOfGates:
    gate_rate_hz: float
    gate_width_s: float
    dead_time_s: float | None = None
    start_delay_shifts: int = 1
    window_start_s: float = 0.0
    window_stop_s: float | None = None
    name = "train"


@dataclass(frozen=True)
class FreeRunning:
    """Armed continuously, re-armed after the dead time.

    Modelled as back-to-back gates of ``resolution_s``, i.e. the duty-cycle
    one limit of gating; a detection is time-stamped at the end of its slot.
    """

    resolution_s: float
    dead_time_s: float | None = None
    window_start_s: float = 0.0
    window_stop_s: float | None = None
    name = "free_running"

    @property
    def gate_width_s(self) -> float:
        return self.resolution_s


@dataclass(frozen=True)
class RapidGating:
    """Short (~200 ps) gates at ~1 GHz with a short dead time.

    Physics is identical to classical gating; only the parameter set
    differs. ``afterpulse_a0`` overrides the detector's trap amplitude; the
    default keeps the summed afterpulse probability per avalanche near 4 %
    with the default trap lifetime (``None`` inherits the detector's).
    Consecutive gates are pooled into bins of ``bin_width_s``.
    """

    gate_rate_hz: float = 1e9
    gate_width_s: float = 200e-12
    dead_time_s: float | None = 10e-9
    bin_width_s: float = 50e-9
    afterpulse_a0: float | None = 1e-3
    window_start_s: float = 0.0
    window_stop_s: float | None = None
    name = "rapid"


GatingScheme = Basic | TrainOfGates | FreeRunning | RapidGating
SCHEME_NAMES = {"basic": Basic, "train": TrainOfGates, "free_running": FreeRunning, "rapid": RapidGating}


@dataclass(frozen=True)
class GateSchedule:
    timelines: tuple[np.ndarray, ...]  # gate starts per timeline, s after pulse launch
    timeline_bins: tuple[np.ndarray, ...]  # trace bin of each gate
    bin_delays: np.ndarray
    gate_width_s: float
    dead_time_s: float
    duty_cycle: float
    kind: str
    afterpulse_a0: float | None = None

    @property
    def n_bins(self) -> int:
        return len(self.bin_delays)

    @property
    def gates_per_pulse(self) -> int:
        return sum(len(t) for t in self.timelines)


def dead_time_of(scheme: GatingScheme, apd: ApdModel) -> float:
    return apd.dead_time_s if scheme.dead_time_s is None else scheme.dead_time_s


def _window(scheme, link: FiberLink, laser: LaserConfig) -> tuple[float, float]:
    rt = link.round_trip_s
    start = scheme.window_start_s
    stop = rt if scheme.window_stop_s is None else scheme.window_stop_s
    if start < 0 or stop <= start:
        raise ScheduleError(f"empty or negative delay window [{start:g}, {stop:g}] s")
    if stop > rt * (1 + _REL):
        raise ScheduleError(f"window end {stop:g} s lies beyond the round trip {rt:g} s")
    if stop > laser.period_s * (1 + _REL):
        raise ScheduleError("window end lies beyond the pulse period")
    return start, stop


def _grid(start: float, stop: float, step: float, width: float) -> np.ndarray:
    n = int(math.floor((stop - width - start) / step * (1 + _REL) + _REL)) + 1
    if n < 1:
        raise ScheduleError("no gate fits inside the delay window")
    return start + step * np.arange(n)


def _check_gate_rate(rate: float, width: float) -> None:
    if not width > 0:
        raise ScheduleError("gate width must be > 0")
    if not rate * width < 1:
        raise ScheduleError(f"invariant f_gate * dt_gate < 1 violated: {rate:g} Hz * {width:g} s = {rate * width:g}")


def build_schedule(scheme: GatingScheme, laser: LaserConfig, link: FiberLink, apd: ApdModel | None = None) -> GateSchedule:
    """Gate timing per laser pulse for ``scheme`` on ``link``."""
    try:
        check_repetition(link, laser)
    except ValueError as exc:
        raise ScheduleError(str(exc)) from None
    apd = apd or ApdModel()
    tau = dead_time_of(scheme, apd)
    if tau < 0:
        raise ScheduleError("dead time must be >= 0")
    start, stop = _window(scheme, link, laser)

    if isinstance(scheme, Basic):
        if not scheme.delay_step_s > 0:
            raise ScheduleError("delay step must be > 0")
        if not scheme.gate_width_s > 0:
            raise ScheduleError("gate width must be > 0")
        delays = _grid(start, stop, scheme.delay_step_s, scheme.gate_width_s)
        return GateSchedule(
            timelines=tuple(np.array([d]) for d in delays),
            timeline_bins=tuple(np.array([i], dtype=np.int64) for i in range(len(delays))),
            bin_delays=delays,
            gate_width_s=scheme.gate_width_s,
            dead_time_s=tau,
            duty_cycle=laser.repetition_hz * scheme.gate_width_s,
            kind=scheme.name,
        )

    if isinstance(scheme, TrainOfGates):
        _check_gate_rate(scheme.gate_rate_hz, scheme.gate_width_s)
        shifts = int(scheme.start_delay_shifts)
        if shifts < 1:
            raise ScheduleError("start_delay_shifts must be >= 1")
        period = 1.0 / scheme.gate_rate_hz
        delays = _grid(start, stop, period / shifts, scheme.gate_width_s)
        timelines, bins = [], []
        for j in range(min(shifts, len(delays))):  # a narrow window may not reach every shift
            idx = np.arange(j, len(delays), shifts, dtype=np.int64)
            timelines.append(delays[idx])
            bins.append(idx)
        return GateSchedule(
            timelines=tuple(timelines),
            timeline_bins=tuple(bins),
            bin_delays=delays,
            gate_width_s=scheme.gate_width_s,
            dead_time_s=tau,
            duty_cycle=scheme.gate_rate_hz * scheme.gate_width_s,
            kind=scheme.name,
        )

    if isinstance(scheme, FreeRunning):
        if not scheme.resolution_s > 0:
            raise ScheduleError("resolution must be > 0")
        delays = _grid(start, stop, scheme.resolution_s, scheme.resolution_s)
        return GateSchedule(
            timelines=(delays,),
            timeline_bins=(np.arange(len(delays), dtype=np.int64),),
            bin_delays=delays,
            gate_width_s=scheme.resolution_s,
            dead_time_s=tau,
            duty_cycle=1.0,
            kind=scheme.name,
        )

    if isinstance(scheme, RapidGating):
        _check_gate_rate(scheme.gate_rate_hz, scheme.gate_width_s)
        period = 1.0 / scheme.gate_rate_hz
        gates = _grid(start, stop, period, scheme.gate_width_s)
        if scheme.bin_width_s < period * (1 - _REL):
            raise ScheduleError("bin width must hold at least one gate period")
        per_bin = max(1, int(round(scheme.bin_width_s / period)))
        bins = np.arange(len(gates), dtype=np.int64) // per_bin
        n_bins = int(bins[-1]) + 1
        return GateSchedule(
            timelines=(gates,),
            timeline_bins=(bins,),
            bin_delays=start + per_bin * period * np.arange(n_bins),
            gate_width_s=scheme.gate_width_s,
            dead_time_s=tau,
            duty_cycle=scheme.gate_rate_hz * scheme.gate_width_s,
            kind=scheme.name,
            afterpulse_a0=scheme.afterpulse_a0,
        )

    raise TypeError(f"unknown gating scheme {scheme!r}")


def shifts_for_resolution(gate_rate_hz: float, resolution_km: float, group_speed_km_s: float) -> int:
    """Interleaved start-delay shifts needed to sample at ``resolution_km``
    with a train limited to ``gate_rate_hz``; total time grows by the same
    factor."""
    step = 2.0 * resolution_km / group_speed_km_s
    return max(1, math.ceil((1.0 / gate_rate_hz) / step * (1 - _REL)))


# --- activation statistics -------------------------------------------------


def activation_probability(i: int, p_sig_gate1: float) -> float:
    """Probability that gate ``i`` of a train is armed when every earlier
    gate lies inside the dead time of gate 1."""
    if i < 1:
        raise ValueError("gate index starts at 1")
    if not 0 <= p_sig_gate1 < 1:
        raise ValueError("p_sig_gate1 must lie in [0, 1)")
    return (1.0 - p_sig_gate1) ** (i - 1)


@dataclass(frozen=True)
class GateRateLimit:
    continuous_hz: float  # solves (1 - p)^(f tau) = a_min
    gates_per_dead_time: int  # deepest gate index whose activation stays >= a_min
    integer_hz: float  # gates_per_dead_time / tau
    free_running: bool  # cap 1/dt_gate binds: prefer free running

    @property
    def f_tau(self) -> float:
        return self.gates_per_dead_time


def max_gate_frequency(
    p_sig_gate1: float, dead_time_s: float, activation_min: float, gate_width_s: float | None = None
) -> GateRateLimit:
    """Largest gate rate that keeps every gate's activation above
    ``activation_min``.

    Two answers are returned: the continuous root of
    ``(1 - p)^(f tau) = a_min`` and the whole-gate count ``n`` with
    ``(1 - p)^(n - 1) >= a_min``, which is how a train is actually built.
    """
    if not 0 < activation_min < 1:
        raise ValueError("activation_min must lie in (0, 1)")
    if not dead_time_s > 0:
        raise ValueError("dead time must be > 0")
    if not 0 <= p_sig_gate1 < 1:
        raise ValueError("p_sig_gate1 must lie in [0, 1)")
    cap = math.inf if gate_width_s is None else 1.0 / gate_width_s
    if p_sig_gate1 == 0:
        return GateRateLimit(cap, 0 if math.isinf(cap) else int(cap * dead_time_s), cap, True)
    ratio = math.log(activation_min) / math.log1p(-p_sig_gate1)
    continuous = ratio / dead_time_s
    n = int(math.floor(1.0 + ratio + 1e-12))
    integer = n / dead_time_s
    if integer >= cap or continuous >= cap:
        return GateRateLimit(min(continuous, cap), n, min(integer, cap), True)
    return GateRateLimit(continuous, n, integer, False)


def detection_rate(efficiency: float, photon_rate: float, duty_cycle: float, dead_time_s: float) -> float:
    """Linearized detection rate ``1 / (1/(eta mu Gamma) + tau)``, Hz."""
    if min(efficiency, photon_rate, duty_cycle, dead_time_s) < 0 or duty_cycle > 1:
        raise ValueError("arguments must be >= 0 and duty cycle <= 1")
    signal = efficiency * photon_rate * duty_cycle
    if signal == 0:
        return 0.0
    return 1.0 / (1.0 / signal + dead_time_s)


@dataclass(frozen=True)
class FreeRunThreshold:
    b: float
    photon_rate: float
    power_w: float


def free_running_threshold(efficiency: float, dead_time_s: float, activation_min: float, photon_energy: float | None = None) -> FreeRunThreshold:
    """Photon flux below which a train would need gates closer than the gate
    width, i.e. where free running is the natural choice.

    ``b = -ln(activation_min)``.
    """
    if not 0 < activation_min < 1:
        raise ValueError("activation_min must lie in (0, 1)")
    if not efficiency > 0 or not dead_time_s > 0:
        raise ValueError("efficiency and dead time must be > 0")
    b = -math.log(activation_min)
    mu = b / (efficiency * dead_time_s)
    hnu = photon_energy_of() if photon_energy is None else photon_energy
    return FreeRunThreshold(b, mu, hnu * mu)


@dataclass(frozen=True)
class Recommendation:
    scheme: GatingScheme
    threshold_photon_rate: float
    rationale: str


def recommend_scheme(photon_rate: float, apd: ApdModel, rapid: RapidGating, freerun: FreeRunning) -> Recommendation:
    """Free running below ``1/(eta tau_fr)``, rapid gating at or above."""
    tau = dead_time_of(freerun, apd)
    threshold = math.inf if tau == 0 else 1.0 / (apd.efficiency * tau)
    if photon_rate < threshold:
        return Recommendation(
            freerun,
            threshold,
            f"flux {photon_rate:.3g}/s below 1/(eta tau) = {threshold:.3g}/s: duty cycle dominates, free running",
        )
    return Recommendation(
        rapid,
        threshold,
        f"flux {photon_rate:.3g}/s at or above 1/(eta tau) = {threshold:.3g}/s: dead time dominates, rapid gating",
    )
