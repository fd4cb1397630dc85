"""Multi-run procedures on top of :func:`~nuotdr.engine.run_acquisition`.

Attenuator setting for a target first-bin detection rate, the partial-trace
campaign that steps the attenuator down as the trace sinks into the noise,
stitching of overlapping partial traces, and the pulse-width zoom.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .detector import ApdModel
from .engine import Trace, TraceBin, run_acquisition
from .errors import CampaignError, StitchError
from .fiber import FiberLink, LaserConfig, mean_gate_power
from .metrics import count_peaks
from .schemes import Basic, GatingScheme, build_schedule

_DELAY_TOL_S = 1e-12


@dataclass(frozen=True)
class CampaignSettings:
    dwell_s: float
    snr_floor: float = 4.0
    floor_run: int = 3  # consecutive bins under the floor that end a partial
    overlap_km: float = 5.0
    target_rate: float = 0.9
    verify_pulses: int = 2000
    verify_tolerance: float = 0.05
    max_partials: int = 32

    def __post_init__(self):
        if not self.dwell_s > 0:
            raise ValueError("dwell must be > 0 s")
        if not self.snr_floor > 0:
            raise ValueError("SNR floor must be > 0")
        if self.floor_run < 1:
            raise ValueError("floor_run must be >= 1")
        if not self.overlap_km > 0:
            raise ValueError("overlap must be > 0 km")
        if not 0 < self.target_rate < 1:
            raise ValueError("target rate must lie in (0, 1)")


@dataclass(frozen=True)
class PartialTrace:
    trace: Trace
    attenuation_db: float
    overlap_span_km: float
    index: int = 0

    @property
    def span_km(self) -> tuple[float, float]:
        z = self.trace.distances
        return float(z[0]), float(z[-1])


@dataclass(frozen=True)
class CampaignResult:
    stitched: Trace
    partials: tuple[PartialTrace, ...]
    wall_time_simulated_s: float
    seed: int
    unmeasured_from_km: float | None = None

    @property
    def complete(self) -> bool:
        return self.unmeasured_from_km is None


def _first_bin_scheme(scheme: GatingScheme, laser, link, apd) -> GatingScheme:
    """Same scheme restricted to a window holding the first bin or two."""
    sched = build_schedule(scheme, laser, link, apd)
    d = sched.bin_delays
    stop = d[min(1, len(d) - 1)] + sched.gate_width_s
    full_stop = link.round_trip_s if scheme.window_stop_s is None else scheme.window_stop_s
    return dataclasses.replace(scheme, window_stop_s=min(stop, full_stop))


def _hazards_first_bin(link, laser, apd, scheme) -> tuple[float, float]:
    sched = build_schedule(scheme, laser, link, apd)
    # gates of bin 0, averaged over its gates
    starts = np.concatenate([t[b == 0] for t, b in zip(sched.timelines, sched.timeline_bins)])
    power = float(np.mean(mean_gate_power(link, laser, starts, sched.gate_width_s)))
    return float(apd.signal_hazard(power, sched.gate_width_s)), apd.dark_hazard(sched.gate_width_s)


def _solve_attenuation(h_sig: float, h_dark: float, h_target: float) -> float:
    need = h_target - h_dark
    if need <= 0:
        raise CampaignError("target rate lies below the dark-count floor")
    if h_sig <= 0:
        raise CampaignError("no signal in the first bin")
    att = 10.0 * math.log10(h_sig / need)
    if att < -1e-9:
        raise CampaignError(
            f"target rate unreachable: first-bin detection probability is only {-math.expm1(-(h_sig + h_dark)):.3g} without attenuation"
        )
    return max(att, 0.0)


def auto_attenuate(
    link: FiberLink,
    laser: LaserConfig,
    apd: ApdModel,
    scheme: GatingScheme,
    target_rate: float = 0.9,
    *,
    seed: int = 0,
    stream: tuple = ("attenuate",),
    verify: bool = True,
    verify_pulses: int = 2000,
    tolerance: float = 0.05,
) -> float:
    """Attenuation (dB) putting the first bin's detection rate at ``target_rate``.

    Solved on the analytic detection probability, then checked with a short
    Monte Carlo run. If afterpulsing or persistence push the measured rate off
    by more than ``tolerance``, the extra hazard is folded in once and the
    check repeated.
    """
    if not 0 < target_rate < 1:
        raise ValueError("target rate must lie in (0, 1)")
    h_sig, h_dark = _hazards_first_bin(link, laser, apd, scheme)
    h_target = -math.log1p(-target_rate)
    att = _solve_attenuation(h_sig, h_dark, h_target)
    if not verify:
        return att
    probe = _first_bin_scheme(scheme, laser, link, apd)
    if isinstance(probe, Basic):
        probe = dataclasses.replace(probe, gates_per_point=verify_pulses)
    duration = verify_pulses / laser.repetition_hz
    for attempt in range(2):
        tr = run_acquisition(link, laser, apd, probe, duration, att, seed, stream=(*stream, attempt))
        rate = tr[0].rate
        if abs(rate - target_rate) <= tolerance:
            return att
        if attempt == 0:
            if rate >= 1.0:
                raise CampaignError("first bin saturates at the computed attenuation")
            extra = -math.log1p(-rate) - (h_sig * 10.0 ** (-att / 10.0) + h_dark)
            att = _solve_attenuation(h_sig, h_dark + extra, h_target)
    raise CampaignError(f"measured first-bin rate {rate:.3f} misses target {target_rate} by more than {tolerance}")


def _floor_index(trace: Trace, floor: float, run: int) -> int | None:
    """First bin of the first run of ``run`` consecutive bins under ``floor``."""
    below = [not (b.snr >= floor) for b in trace.bins]
    count = 0
    for i, flag in enumerate(below):
        count = count + 1 if flag else 0
        if count == run:
            return i - run + 1
    return None


def _with_provenance(trace: Trace, index: int, bins, wall_time_s: float) -> Trace:
    return Trace(tuple(dataclasses.replace(b, provenance=index) for b in bins), trace.reference_w, trace.gate_width_s, trace.kind, wall_time_s)


def partial_trace_campaign(
    link: FiberLink,
    laser: LaserConfig,
    apd: ApdModel,
    scheme: GatingScheme,
    settings: CampaignSettings,
    seed: int = 0,
    *,
    workers: int = 1,
    dark_baseline=None,
    shutter_open_s: float | None = None,
) -> CampaignResult:
    """Acquire the trace in attenuation-stepped, overlapping pieces.

    Each partial starts at ``target_rate`` in its first bin and runs until
    ``floor_run`` consecutive bins fall under ``snr_floor``. The next partial
    rewinds by ``overlap_km`` and removes attenuation to regain the target
    rate. When no attenuation is left the campaign stops and the rest of the
    link is reported unmeasured.
    """
    full = build_schedule(scheme, laser, link, apd)
    delays = full.bin_delays
    step = float(delays[1] - delays[0]) if len(delays) > 1 else 0.0
    first_start = float(delays[0])
    overlap_s = 2.0 * settings.overlap_km / link.group_speed_km_s

    partials: list[PartialTrace] = []
    wall = 0.0
    start = first_start
    att_prev = math.inf
    reference = None
    unmeasured = None
    for k in range(settings.max_partials):
        sub = dataclasses.replace(scheme, window_start_s=start)
        try:
            att = auto_attenuate(
                link, laser, apd, sub, settings.target_rate, seed=seed, stream=("partial", k, "attenuate"),
                verify_pulses=settings.verify_pulses, tolerance=settings.verify_tolerance,
            )
        except CampaignError:
            if k == 0:
                raise
            att = 0.0
        if k > 0 and att >= att_prev:
            # nothing left to remove: the rest of the link stays unmeasured
            unmeasured = partials[-1].span_km[1]
            break
        baseline = None
        if dark_baseline is not None:
            i0 = int(np.searchsorted(delays, start - _DELAY_TOL_S))
            baseline = np.asarray(dark_baseline)[i0:]
        trace = run_acquisition(
            link, laser, apd, sub, settings.dwell_s, att, seed,
            workers=workers, stream=("partial", k), reference_w=reference, dark_baseline=baseline,
            shutter_open_s=shutter_open_s,
        )
        if reference is None:
            reference = trace.reference_w
        cut = _floor_index(trace, settings.snr_floor, settings.floor_run)
        kept = trace.bins if cut is None else trace.bins[:cut]
        if not kept:
            if not partials:
                raise CampaignError("the first partial trace starts below the SNR floor")
            unmeasured = partials[-1].span_km[1]
            break
        # only the delay points actually scanned cost time
        spent = trace.wall_time_s * (len(kept) / len(trace) if isinstance(scheme, Basic) else 1.0)
        wall += spent
        overlap = 0.0 if k == 0 else float(link.distance_km(partials[-1].trace.delays[-1] - start))
        partials.append(PartialTrace(_with_provenance(trace, k, kept, spent), att, max(overlap, 0.0), k))
        att_prev = att
        if cut is None:
            break
        rewind = float(trace.bins[cut].delay_s) - overlap_s
        nxt = first_start + step * math.floor((rewind - first_start) / step + 1e-9) if step else rewind
        if nxt <= start + _DELAY_TOL_S:
            nxt = start + step * max(1, cut - 1) if step else float(trace.bins[cut].delay_s)
        start = nxt
    else:
        unmeasured = partials[-1].span_km[1]

    stitched = stitch_traces(partials)
    return CampaignResult(stitched, tuple(partials), wall, seed, unmeasured)


def stitch_traces(partials, min_overlap: int = 3) -> Trace:
    """Chain partial traces into one.

    Each partial is shifted by the mean dB difference to the already
    stitched prefix over their common delay bins; in the overlap the later
    partial replaces the earlier one. Bins keep the provenance of the
    partial they came from.
    """
    partials = list(partials)
    if not partials:
        raise StitchError("nothing to stitch")
    first = partials[0].trace
    out: list[TraceBin] = list(first.bins)
    for p in partials[1:]:
        bins = p.trace.bins
        if not bins:
            raise StitchError(f"partial {p.index} is empty")
        prefix_delays = np.array([b.delay_s for b in out])
        diffs, variances, inherited = [], [], []
        for b in bins:
            j = int(np.searchsorted(prefix_delays, b.delay_s - _DELAY_TOL_S))
            if j < len(out) and abs(prefix_delays[j] - b.delay_s) <= _DELAY_TOL_S:
                a = out[j]
                if math.isfinite(a.db_value) and math.isfinite(b.db_value):
                    diffs.append(a.db_value - b.db_value)
                    variances.append(a.sigma_db**2 - a.stitch_sigma_db**2 + b.sigma_db**2)
                    inherited.append(a.stitch_sigma_db**2)
        if len(diffs) < min_overlap:
            raise StitchError(f"partial {p.index} overlaps the stitched trace in {len(diffs)} bins, need {min_overlap}")
        offset = float(np.mean(diffs))
        # standard error of the mean plus the prefix's own offset uncertainty
        var = float(np.sum(variances)) / len(diffs) ** 2 + float(np.mean(inherited))
        sigma = math.sqrt(var) if math.isfinite(var) else math.inf
        cut = int(np.searchsorted(prefix_delays, bins[0].delay_s - _DELAY_TOL_S))
        out = out[:cut] + [dataclasses.replace(b, db_value=b.db_value + offset, stitch_sigma_db=sigma) for b in bins]
    wall = sum(p.trace.wall_time_s for p in partials)
    return Trace(tuple(out), first.reference_w, first.gate_width_s, first.kind, wall)


def stitch_offsets(partials) -> list[float]:
    """Offsets :func:`stitch_traces` applies, partial by partial (first is 0)."""
    stitched = stitch_traces(partials)
    by_delay = {round(b.delay_s / _DELAY_TOL_S): b.db_value for b in stitched.bins}
    out = [0.0]
    for p in list(partials)[1:]:
        b = p.trace.bins[-1]
        out.append(by_delay[round(b.delay_s / _DELAY_TOL_S)] - b.db_value)
    return out


@dataclass(frozen=True)
class ZoomStep:
    pulse_width_s: float
    trace: Trace
    peaks_km: np.ndarray


def zoom_campaign(
    link: FiberLink,
    laser: LaserConfig,
    apd: ApdModel,
    center_km: float,
    half_span_km: float,
    pulse_widths_s,
    duration_s: float,
    attenuation_db: float = 0.0,
    seed: int = 0,
    *,
    samples_per_pulse: int = 4,
    min_prominence_db: float = 1.0,
    workers: int = 1,
) -> list[ZoomStep]:
    """Re-measure a window around ``center_km`` with successively shorter
    pulses (gate = pulse, delay step = pulse / ``samples_per_pulse``) and
    count the resolved peaks at each step."""
    steps = []
    for k, width in enumerate(pulse_widths_s):
        las = dataclasses.replace(laser, pulse_width_s=width)
        lo = link.delay_s(max(center_km - half_span_km, 0.0))
        hi = min(link.delay_s(center_km + half_span_km), link.round_trip_s)
        scheme = Basic(width / samples_per_pulse, width, window_start_s=float(lo), window_stop_s=float(hi))
        tr = run_acquisition(link, las, apd, scheme, duration_s, attenuation_db, seed, workers=workers, stream=("zoom", k))
        steps.append(ZoomStep(width, tr, count_peaks(tr, min_prominence_db)))
    return steps
