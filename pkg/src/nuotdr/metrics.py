"""Trace metrics: slope fits, dead zones and peak counting."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .engine import Trace

_POS_TOL_KM = 1e-9


def fit_slope(trace: Trace, start_km: float | None = None, stop_km: float | None = None) -> tuple[float, float]:
    """Least-squares line through the finite trace values, (dB/km, dB)."""
    z, db = trace.distances, trace.db
    keep = np.isfinite(db)
    if start_km is not None:
        keep &= z >= start_km
    if stop_km is not None:
        keep &= z <= stop_km
    if keep.sum() < 2:
        raise ValueError("need at least two finite bins to fit a slope")
    slope, intercept = np.polyfit(z[keep], db[keep], 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class DeadZone:
    length_km: float
    recovered: bool
    fit_slope_db_per_km: float
    fit_intercept_db: float
    tail_decay_db_per_km: float  # NaN when no bin exceeds the tail threshold


def measure_dead_zone(
    trace: Trace,
    event_position_km: float,
    threshold_db: float = 0.5,
    fit_start_km: float | None = None,
    tail_excess_db: float = 3.0,
    tail_skip_km: float = 0.05,
) -> DeadZone:
    """Distance behind an event until the trace stays within ``threshold_db``
    of the backscatter level fitted on the far window.

    The far window runs from ``fit_start_km`` (default: halfway between the
    event and the trace end) to the end. The tail decay is the negated slope
    of the trace over bins whose excess above the fit exceeds
    ``tail_excess_db``, skipping ``tail_skip_km`` right after the event where
    the reflection sits.
    """
    if not threshold_db > 0:
        raise ValueError("threshold must be > 0 dB")
    z, db = trace.distances, trace.db
    post = z >= event_position_km - _POS_TOL_KM
    if not post.any() or z[post][-1] - event_position_km < 3.0:
        raise ValueError("trace must extend at least 3 km past the event")
    end = float(z[post][-1])
    start = event_position_km + 0.5 * (end - event_position_km) if fit_start_km is None else fit_start_km
    slope, intercept = fit_slope(trace, start, end)

    zp, dbp = z[post], db[post]
    excess = dbp - (slope * zp + intercept)
    bad = ~(np.abs(excess) <= threshold_db)  # NaN counts as not recovered

    tail = (excess > tail_excess_db) & (zp >= event_position_km + tail_skip_km) & np.isfinite(dbp)
    decay = -float(np.polyfit(zp[tail], dbp[tail], 1)[0]) if tail.sum() >= 2 else math.nan

    if math.isinf(threshold_db) or not bad.any():
        return DeadZone(0.0, True, slope, intercept, decay)
    last = int(np.flatnonzero(bad)[-1])
    if last == len(zp) - 1:
        return DeadZone(end - event_position_km, False, slope, intercept, decay)
    e0, e1 = abs(excess[last]), abs(excess[last + 1])
    frac = 1.0 if not math.isfinite(e0) else (e0 - threshold_db) / (e0 - e1)
    crossing = zp[last] + frac * (zp[last + 1] - zp[last])
    return DeadZone(float(crossing - event_position_km), True, slope, intercept, decay)


def count_peaks(trace: Trace, min_prominence_db: float = 1.0, start_km: float | None = None, stop_km: float | None = None) -> np.ndarray:
    """Positions (km) of peaks standing out by at least ``min_prominence_db``;
    two reflections count as resolved when the dip between them is that
    deep."""
    z, db = trace.distances, trace.db
    keep = np.ones_like(z, dtype=bool)
    if start_km is not None:
        keep &= z >= start_km
    if stop_km is not None:
        keep &= z <= stop_km
    y = db[keep]
    finite = y[np.isfinite(y)]
    if finite.size == 0:
        return np.empty(0)
    # saturated bins sit on top, empty or sub-floor bins at the bottom
    y = np.where(y == np.inf, finite.max() + min_prominence_db, y)
    y = np.where(np.isfinite(y), y, finite.min())
    idx, _ = find_peaks(y, prominence=min_prominence_db)
    return z[keep][idx]
