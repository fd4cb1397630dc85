"""Monte Carlo trace acquisition.

Each laser pulse fires the gates of a :class:`~nuotdr.schemes.GateSchedule`;
every timeline of the schedule is one detector whose trap and dead-time state
carry from gate to gate and from pulse to pulse. Counts are binned by delay
and inverted back to optical power per bin.

Charge persistence does not depend on detections, so its excess hazard per
gate is computed once per timeline as the periodic steady state of the
sub-breakdown illumination and handed to the kernel as a fixed array.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernel
from .detector import TRAP_MAX, ApdModel, estimate_power
from .errors import ScheduleError
from .fiber import FiberLink, LaserConfig, incident_power, mean_gate_power
from .rng import substream
from .schemes import Basic, GateSchedule, GatingScheme, build_schedule
from .units import REFERENCE_GATE_S

# Trap population carried between gates below which gates count as independent.
NEGLIGIBLE_TRAP = 1e-12
# Uniforms drawn per kernel call.
BLOCK_DRAWS = 1 << 20
# Persistence integration grid is never coarser than pulse/4 unless it would
# exceed this many points.
MAX_PERSISTENCE_GRID = 200_000

FLAGS = ("ok", "no_data", "below_floor", "saturated")
CSV_COLUMNS = (
    "distance_km",
    "delay_s",
    "gates_applied",
    "gates_activated",
    "detections",
    "attenuation_db",
    "est_power_w",
    "trace_db",
    "provenance",
)


@dataclass(frozen=True)
class TraceBin:
    delay_s: float
    distance_km: float
    gates_applied: int
    gates_activated: int
    detections: int
    attenuation_db: float
    estimated_power_w: float
    power_low_w: float = math.nan
    power_high_w: float = math.nan
    db_value: float = math.nan
    snr: float = math.nan
    flag: str = "ok"
    provenance: int = 0
    causes: tuple[int, int, int, int] = (0, 0, 0, 0)
    stitch_sigma_db: float = 0.0  # uncertainty of the offset applied when stitching

    def __post_init__(self):
        if not 0 <= self.detections <= self.gates_activated <= self.gates_applied:
            raise ValueError(
                f"counts violate detections <= activated <= applied: "
                f"{self.detections}, {self.gates_activated}, {self.gates_applied}"
            )
        if self.flag not in FLAGS:
            raise ValueError(f"unknown bin flag {self.flag!r}")

    @property
    def rate(self) -> float:
        """Detections per activated gate."""
        return self.detections / self.gates_activated if self.gates_activated else math.nan

    @property
    def sigma_db(self) -> float:
        """Half width of the 1-sigma power interval on the trace scale,
        combined with any stitching uncertainty."""
        if not (self.estimated_power_w > 0 and self.power_low_w > 0 and math.isfinite(self.power_high_w)):
            return math.inf
        lo = 5.0 * math.log10(self.estimated_power_w / self.power_low_w)
        hi = 5.0 * math.log10(self.power_high_w / self.estimated_power_w)
        return math.hypot(max(hi, lo), self.stitch_sigma_db)


@dataclass(frozen=True)
class Trace:
    bins: tuple[TraceBin, ...]
    reference_w: float
    gate_width_s: float
    kind: str = "basic"
    wall_time_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(self.bins))

    def __len__(self) -> int:
        return len(self.bins)

    def __iter__(self):
        return iter(self.bins)

    def __getitem__(self, i):
        return self.bins[i]

    def _col(self, name, dtype=float) -> np.ndarray:
        return np.array([getattr(b, name) for b in self.bins], dtype=dtype)

    @property
    def delays(self) -> np.ndarray:
        return self._col("delay_s")

    @property
    def distances(self) -> np.ndarray:
        return self._col("distance_km")

    @property
    def db(self) -> np.ndarray:
        return self._col("db_value")

    @property
    def power(self) -> np.ndarray:
        return self._col("estimated_power_w")

    @property
    def applied(self) -> np.ndarray:
        return self._col("gates_applied", np.int64)

    @property
    def activated(self) -> np.ndarray:
        return self._col("gates_activated", np.int64)

    @property
    def detections(self) -> np.ndarray:
        return self._col("detections", np.int64)

    @property
    def rates(self) -> np.ndarray:
        return self._col("rate")

    @property
    def snr(self) -> np.ndarray:
        return self._col("snr")

    @property
    def sigma_db(self) -> np.ndarray:
        return self._col("sigma_db")

    @property
    def flags(self) -> list[str]:
        return [b.flag for b in self.bins]

    @property
    def causes(self) -> np.ndarray:
        return np.array([b.causes for b in self.bins], dtype=np.int64).reshape(-1, 4)

    def window(self, start_km: float, stop_km: float) -> Trace:
        keep = tuple(b for b in self.bins if start_km <= b.distance_km <= stop_km)
        return Trace(keep, self.reference_w, self.gate_width_s, self.kind, self.wall_time_s)


# --- persistence -------------------------------------------------------------


def _light_grid(link: FiberLink, laser: LaserConfig) -> np.ndarray:
    horizon = min(link.round_trip_s, laser.period_s)
    step = max(laser.pulse_width_s / 4.0, horizon / MAX_PERSISTENCE_GRID)
    n = int(math.ceil(horizon / step))
    return np.linspace(0.0, horizon, n + 1)


@dataclass(frozen=True)
class _LightSource:
    """Persistence source rate (per-10-ns excess per second) on a fixed grid,
    piecewise constant between grid points."""

    grid: np.ndarray
    rate: np.ndarray
    period_s: float

    def rate_at(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.grid, t, side="right") - 1
        inside = (idx >= 0) & (idx < len(self.rate))
        out = np.zeros_like(t)
        out[inside] = self.rate[idx[inside]]
        return out


def _light_source(link, laser, apd, attenuation_db, shutter_open_s) -> _LightSource:
    grid = _light_grid(link, laser)
    mids = 0.5 * (grid[1:] + grid[:-1])
    power = incident_power(link, laser, mids) * 10.0 ** (-attenuation_db / 10.0)
    if shutter_open_s is not None:
        power = np.where(mids < shutter_open_s, 0.0, power)
    rate = apd.persistence.kappa * power / apd.photon_energy
    return _LightSource(grid, rate, laser.period_s)


def persistence_profile(
    source: _LightSource, apd: ApdModel, gate_starts: np.ndarray, gate_width_s: float
) -> np.ndarray:
    """Periodic steady-state persistence excess at each gate start.

    Light only builds up the excess while the diode is below breakdown, so
    the gate intervals themselves are masked out; everywhere the excess
    relaxes at ``gamma``.
    """
    starts = np.asarray(gate_starts, dtype=float)
    if starts.size == 0 or apd.persistence.kappa == 0.0 or not np.any(source.rate > 0):
        return np.zeros_like(starts)
    gamma = apd.persistence.gamma_hz
    if gamma <= 0:
        raise ValueError("persistence without relaxation has no steady state")
    period = source.period_s
    ends = np.minimum(starts + gate_width_s, period)
    grid = np.unique(np.concatenate([source.grid[source.grid <= period], starts, ends, [0.0, period]]))
    mids = 0.5 * (grid[1:] + grid[:-1])
    rate = source.rate_at(mids)
    g = np.searchsorted(starts, mids, side="right") - 1
    gated = (g >= 0) & (mids < starts[np.clip(g, 0, None)] + gate_width_s)
    rate[gated] = 0.0
    dt = np.diff(grid)
    decay = np.exp(-gamma * dt)
    gain = rate * -np.expm1(-gamma * dt) / gamma
    x = kernel.decay_accumulate(decay, gain, 0.0)
    x0 = x[-1] / -math.expm1(-gamma * period)
    x = x + x0 * np.exp(-gamma * grid)
    out = x[np.searchsorted(grid, starts)]
    return np.minimum(out, TRAP_MAX)


# --- acquisition -------------------------------------------------------------


def _pulses_for(scheme: GatingScheme, laser: LaserConfig, duration_s: float) -> int:
    if isinstance(scheme, Basic) and scheme.gates_per_point is not None:
        n = int(scheme.gates_per_point)
    else:
        n = int(round(duration_s * laser.repetition_hz))
    if n < 1:
        raise ScheduleError(f"duration {duration_s:g} s holds no laser pulse at {laser.repetition_hz:g} Hz")
    return n


def _independent_gates(starts: np.ndarray, width: float, period: float, dead_time: float, a0: float, tau_trap: float) -> bool:
    """True if neither dead time nor trap population links successive gates."""
    if len(starts) > 1:
        spacing = min(float(np.min(np.diff(starts))), period - float(starts[-1]) + float(starts[0]))
    else:
        spacing = period
    if spacing < width + dead_time:
        return False
    return a0 == 0.0 or a0 * math.exp(-(spacing - width) / tau_trap) < NEGLIGIBLE_TRAP


@dataclass
class _Counts:
    applied: np.ndarray
    activated: np.ndarray
    detected: np.ndarray
    causes: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> _Counts:
        z = np.zeros(n, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy(), np.zeros((n, 4), dtype=np.int64))


def _run_timeline(job) -> _Counts:
    (seed, stream, j, starts, bins, h_sig, h_dark, h_pers, width, period, tau, a0, tau_trap, m, n_pulses, fast) = job
    local_bins, local_idx = np.unique(bins, return_inverse=True)
    local_idx = local_idx.astype(np.int64)
    c = _Counts.zeros(len(local_bins))
    if fast:
        total = h_sig + h_dark + h_pers
        p = -np.expm1(-total)
        for k in range(len(starts)):
            rng = substream(seed, *stream, "timeline", j, "gate", k)
            b = local_idx[k]
            c.applied[b] += n_pulses
            c.activated[b] += n_pulses
            if total[k] <= 0.0:
                continue
            n = int(rng.binomial(n_pulses, p[k]))
            c.detected[b] += n
            if n:
                probs = np.array([h_sig[k], h_dark, 0.0, h_pers[k]]) / total[k]
                c.causes[b] += rng.multinomial(n, probs / probs.sum())
        return c
    state = np.array([0.0, 0.0, -math.inf])
    per_block = max(1, BLOCK_DRAWS // len(starts))
    done = 0
    block = 0
    while done < n_pulses:
        n = min(per_block, n_pulses - done)
        u = substream(seed, *stream, "timeline", j, "block", block).random((n, len(starts)))
        kernel.simulate_block(
            starts, local_idx, h_sig, h_dark, h_pers, width, period, done, tau,
            a0, tau_trap, m, u, state, c.applied, c.activated, c.detected, c.causes,
        )
        done += n
        block += 1
    return c


def run_acquisition(
    link: FiberLink,
    laser: LaserConfig,
    apd: ApdModel,
    scheme: GatingScheme,
    duration_s: float,
    attenuation_db: float = 0.0,
    seed: int = 0,
    *,
    workers: int = 1,
    laser_on: bool = True,
    stream: tuple = (),
    reference_w: float | None = None,
    dark_baseline: np.ndarray | None = None,
    shutter_open_s: float | None = None,
    fast_path: bool | None = None,
    schedule: GateSchedule | None = None,
) -> Trace:
    """Simulate one acquisition and estimate the power in every bin.

    ``duration_s`` is the dwell per delay point in basic mode and the total
    acquisition time otherwise. ``attenuation_db`` is the variable attenuator
    in front of the detector. ``dark_baseline`` replaces the analytic dark
    count expectation with a measured dark probability per activated gate.
    ``fast_path`` forces (True) or forbids (False) drawing independent gates
    as binomials; by default it is used whenever it is exact.
    """
    if not duration_s > 0:
        raise ValueError("duration must be > 0")
    if attenuation_db < 0:
        raise ValueError("attenuation must be >= 0 dB")
    sched = schedule if schedule is not None else build_schedule(scheme, laser, link, apd)
    n_pulses = _pulses_for(scheme, laser, duration_s)
    width = sched.gate_width_s
    a0 = apd.afterpulse.a0 if sched.afterpulse_a0 is None else sched.afterpulse_a0
    tau_trap = apd.afterpulse.tau_trap_s
    m = width / REFERENCE_GATE_S
    h_dark = apd.dark_hazard(width)
    scale = 10.0 ** (-attenuation_db / 10.0)
    source = _light_source(link, laser, apd, attenuation_db, shutter_open_s) if laser_on else None

    jobs = []
    for j, (starts, bins) in enumerate(zip(sched.timelines, sched.timeline_bins)):
        starts = np.ascontiguousarray(starts, dtype=float)
        if laser_on:
            power = mean_gate_power(link, laser, starts, width) * scale
            if shutter_open_s is not None:
                power = np.where(starts < shutter_open_s, 0.0, power)
            h_sig = np.ascontiguousarray(apd.signal_hazard(power, width), dtype=float)
            x = persistence_profile(source, apd, starts, width)
            h_pers = np.ascontiguousarray(np.where(x > 0, -m * np.log1p(-x), 0.0))
        else:
            h_sig = np.zeros_like(starts)
            h_pers = np.zeros_like(starts)
        exact = _independent_gates(starts, width, laser.period_s, sched.dead_time_s, a0, tau_trap)
        fast = exact if fast_path is None else bool(fast_path)
        jobs.append(
            (seed, tuple(stream), j, starts, np.asarray(bins, dtype=np.int64), h_sig, h_dark, h_pers,
             width, laser.period_s, sched.dead_time_s, a0, tau_trap, m, n_pulses, fast)
        )

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_timeline, jobs))
    else:
        results = [_run_timeline(job) for job in jobs]

    total = _Counts.zeros(sched.n_bins)
    for job, c in zip(jobs, results):
        local_bins = np.unique(job[4])
        total.applied[local_bins] += c.applied
        total.activated[local_bins] += c.activated
        total.detected[local_bins] += c.detected
        total.causes[local_bins] += c.causes

    wall = duration_s * len(sched.timelines) if not isinstance(scheme, Basic) else n_pulses / laser.repetition_hz * sched.n_bins
    return _estimate(link, apd, sched, total, attenuation_db, h_dark, reference_w, dark_baseline, wall)


def _estimate(link, apd, sched, counts: _Counts, attenuation_db, h_dark, reference_w, dark_baseline, wall) -> Trace:
    width = sched.gate_width_s
    hnu = apd.photon_energy
    rows = []
    for i in range(sched.n_bins):
        act = int(counts.activated[i])
        det = int(counts.detected[i])
        est = low = high = snr = math.nan
        if act == 0:
            flag = "no_data"
        elif det == act:
            flag, est, low, high, snr = "saturated", math.inf, math.inf, math.inf, math.nan
        else:
            dc_prob = h_dark if dark_baseline is None else float(dark_baseline[i])
            n_dc = dc_prob * act
            pe = estimate_power(apd, det, n_dc, act, width)
            est, low, high = pe.power_w, pe.low_w, pe.high_w
            snr = est * apd.efficiency * act * width / (hnu * math.sqrt(det)) if det else 0.0
            flag = "ok" if est > 0 else "below_floor"
        rows.append(
            dict(
                delay_s=float(sched.bin_delays[i]),
                distance_km=float(link.distance_km(sched.bin_delays[i])),
                gates_applied=int(counts.applied[i]),
                gates_activated=act,
                detections=det,
                attenuation_db=float(attenuation_db),
                estimated_power_w=est,
                power_low_w=low,
                power_high_w=high,
                snr=snr,
                flag=flag,
                causes=tuple(int(v) for v in counts.causes[i]),
            )
        )
    if reference_w is None:
        reference_w = next((r["estimated_power_w"] for r in rows if r["flag"] == "ok"), 1.0)
    bins = tuple(TraceBin(db_value=_to_db(r["estimated_power_w"], reference_w), **r) for r in rows)
    return Trace(bins, float(reference_w), width, sched.kind, float(wall))


def _to_db(power: float, reference_w: float) -> float:
    if math.isnan(power):
        return math.nan
    if power <= 0:
        return -math.inf
    return 5.0 * math.log10(power / reference_w)


def dark_baseline(
    link: FiberLink,
    laser: LaserConfig,
    apd: ApdModel,
    scheme: GatingScheme,
    duration_s: float,
    seed: int = 0,
    *,
    workers: int = 1,
    stream: tuple = ("dark",),
) -> np.ndarray:
    """Measured dark probability per activated gate, laser off."""
    trace = run_acquisition(link, laser, apd, scheme, duration_s, 0.0, seed, workers=workers, laser_on=False, stream=stream)
    act = trace.activated
    return np.where(act > 0, trace.detections / np.maximum(act, 1), apd.dark_hazard(trace.gate_width_s))


def expected_trace_db(link: FiberLink, laser: LaserConfig, trace: Trace, attenuation_db: float = 0.0) -> np.ndarray:
    """Noise-free gate-averaged power per bin on the trace scale, referenced
    like ``trace``."""
    power = mean_gate_power(link, laser, trace.delays, trace.gate_width_s) * 10.0 ** (-attenuation_db / 10.0)
    with np.errstate(divide="ignore"):
        return 5.0 * np.log10(power / trace.reference_w)


# --- CSV ---------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".16e")


def write_trace_csv(trace: Trace, path) -> None:
    """One row per bin; floats carry 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for b in trace.bins:
            w.writerow(
                [
                    _fmt(b.distance_km),
                    _fmt(b.delay_s),
                    b.gates_applied,
                    b.gates_activated,
                    b.detections,
                    _fmt(b.attenuation_db),
                    _fmt(b.estimated_power_w),
                    _fmt(b.db_value),
                    b.provenance,
                ]
            )


def read_trace_csv(path, gate_width_s: float = math.nan) -> Trace:
    """Inverse of :func:`write_trace_csv`. Power intervals and SNR are not
    stored and come back as NaN."""
    bins = []
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise ValueError(f"{path}: header must be {', '.join(CSV_COLUMNS)}")
        for n, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"{path}:{n}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            z, d, app, act, det, att, est, db, prov = row
            est_f = float(est)
            if int(act) == 0:
                flag = "no_data"
            elif int(det) == int(act):
                flag = "saturated"
            elif not est_f > 0:
                flag = "below_floor"
            else:
                flag = "ok"
            bins.append(
                TraceBin(
                    delay_s=float(d),
                    distance_km=float(z),
                    gates_applied=int(app),
                    gates_activated=int(act),
                    detections=int(det),
                    attenuation_db=float(att),
                    estimated_power_w=est_f,
                    db_value=float(db),
                    flag=flag,
                    provenance=int(prov),
                )
            )
    ref = math.nan
    for b in bins:
        if b.flag == "ok" and math.isfinite(b.db_value):
            ref = b.estimated_power_w / 10.0 ** (b.db_value / 5.0)
            break
    return Trace(tuple(bins), ref, gate_width_s, "csv")
