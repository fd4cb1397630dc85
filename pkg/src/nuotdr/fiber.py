"""Deterministic optical model of the fiber under test.

Expected power at the detector versus round-trip delay: Rayleigh backscatter
from piecewise-uniform segments plus rectangular reflection pulses from
point events. All functions accept scalars or numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import FiberRangeError
from .units import DEFAULT_GROUP_SPEED_KM_S, DEFAULT_WAVELENGTH_M, photon_energy

# Not reported for the measured fiber; typical single-mode value at 1550 nm.
DEFAULT_CAPTURE_RATIO = 0.0015
DEFAULT_SCATTERING_PER_KM = 0.04

_POS_TOL_KM = 1e-9


@dataclass(frozen=True)
class FiberSegment:
    length_km: float
    attenuation_db_per_km: float
    alpha_s_per_km: float = DEFAULT_SCATTERING_PER_KM
    capture_ratio: float = DEFAULT_CAPTURE_RATIO

    def __post_init__(self):
        if not self.length_km > 0:
            raise ValueError(f"segment length must be > 0 km, got {self.length_km}")
        if not self.attenuation_db_per_km >= 0:
            raise ValueError(f"attenuation must be >= 0 dB/km, got {self.attenuation_db_per_km}")
        if not self.alpha_s_per_km > 0:
            raise ValueError(f"scattering coefficient must be > 0, got {self.alpha_s_per_km}")
        if not 0 < self.capture_ratio < 1:
            raise ValueError(f"capture ratio must lie in (0, 1), got {self.capture_ratio}")


@dataclass(frozen=True)
class PointEvent:
    """Splice/connector/splitter at ``position_km``.

    ``reflectance_db = -inf`` means non-reflective.
    """

    position_km: float
    loss_db: float = 0.0
    reflectance_db: float = -math.inf

    def __post_init__(self):
        if not self.loss_db >= 0:
            raise ValueError(f"event loss must be >= 0 dB, got {self.loss_db}")
        if not self.reflectance_db <= 0:
            raise ValueError(f"reflectance must be <= 0 dB, got {self.reflectance_db}")
        if self.loss_db == 0 and self.reflectance_db == -math.inf:
            raise ValueError("event has neither loss nor reflection")

    @property
    def reflective(self) -> bool:
        return self.reflectance_db > -math.inf


@dataclass(frozen=True)
class LaserConfig:
    """Pulsed source. ``peak_power_w`` is already corrected for internal and
    connector losses."""

    peak_power_w: float
    pulse_width_s: float
    repetition_hz: float
    wavelength_m: float = DEFAULT_WAVELENGTH_M

    def __post_init__(self):
        if not self.peak_power_w > 0:
            raise ValueError("peak power must be > 0 W")
        if not self.pulse_width_s > 0:
            raise ValueError("pulse width must be > 0 s")
        if not self.repetition_hz > 0:
            raise ValueError("repetition rate must be > 0 Hz")

    @property
    def photon_energy(self) -> float:
        return photon_energy(self.wavelength_m)

    @property
    def period_s(self) -> float:
        return 1.0 / self.repetition_hz


@dataclass(frozen=True)
class FiberLink:
    segments: tuple[FiberSegment, ...]
    events: tuple[PointEvent, ...] = ()
    group_speed_km_s: float = DEFAULT_GROUP_SPEED_KM_S

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: e.position_km)))
        if not self.segments:
            raise ValueError("a fiber link needs at least one segment")
        if not self.group_speed_km_s > 0:
            raise ValueError("group speed must be > 0")
        for ev in self.events:
            if not 0 <= ev.position_km <= self.length_km + _POS_TOL_KM:
                raise ValueError(f"event at {ev.position_km} km lies outside the {self.length_km} km link")

    @classmethod
    def uniform(cls, length_km: float, attenuation_db_per_km: float = 0.2, events=(), **segment_kw) -> FiberLink:
        return cls((FiberSegment(length_km, attenuation_db_per_km, **segment_kw),), tuple(events))

    @cached_property
    def _knots(self) -> tuple[np.ndarray, np.ndarray]:
        ends = np.cumsum([0.0] + [s.length_km for s in self.segments])
        loss = np.cumsum([0.0] + [s.length_km * s.attenuation_db_per_km for s in self.segments])
        return ends, loss

    @property
    def length_km(self) -> float:
        return float(sum(s.length_km for s in self.segments))

    @property
    def round_trip_s(self) -> float:
        return 2.0 * self.length_km / self.group_speed_km_s

    @property
    def max_repetition_hz(self) -> float:
        return self.group_speed_km_s / (2.0 * self.length_km)

    def distance_km(self, delay_s):
        return self.group_speed_km_s * np.asarray(delay_s, dtype=float) / 2.0

    def delay_s(self, distance_km):
        return 2.0 * np.asarray(distance_km, dtype=float) / self.group_speed_km_s

    def segment_index(self, z_km) -> np.ndarray:
        ends, _ = self._knots
        idx = np.searchsorted(ends, np.asarray(z_km, dtype=float), side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def pulse_length_km(self, laser: LaserConfig) -> float:
        """Spatial pulse length c * dt_pulse."""
        return self.group_speed_km_s * laser.pulse_width_s


def check_repetition(link: FiberLink, laser: LaserConfig) -> None:
    """The next pulse must not launch before the previous round trip ends."""
    if laser.repetition_hz > link.max_repetition_hz * (1 + 1e-9):
        raise ValueError(
            f"pulse repetition {laser.repetition_hz:g} Hz exceeds c/(2L) = {link.max_repetition_hz:g} Hz"
        )


def _check_range(link: FiberLink, z: np.ndarray) -> None:
    if np.any(z < -_POS_TOL_KM) or np.any(z > link.length_km + _POS_TOL_KM) or np.any(np.isnan(z)):
        raise FiberRangeError(f"position outside [0, {link.length_km}] km")


def cumulative_loss(link: FiberLink, z_km):
    """One-way loss in dB from the launch point to ``z_km``.

    Event losses count only for events strictly before ``z_km``.
    """
    z = np.asarray(z_km, dtype=float)
    _check_range(link, z)
    ends, loss = link._knots
    total = np.interp(z, ends, loss)
    for ev in link.events:
        if ev.loss_db:
            total = total + np.where(z > ev.position_km, ev.loss_db, 0.0)
    return total[()] if total.ndim == 0 else total


def backscatter_power(link: FiberLink, laser: LaserConfig, z_km, exact: bool = False):
    """Rayleigh backscatter power (W) returned from position ``z_km``.

    Linearized form ``S * P0 * alpha_s * dl_p * 10^(-2 L(z)/10)``; with
    ``exact=True`` the factor ``alpha_s * dl_p`` becomes ``1 - exp(-alpha_s dl_p)``.
    """
    z = np.asarray(z_km, dtype=float)
    loss = cumulative_loss(link, z)
    idx = link.segment_index(z)
    s = np.array([seg.capture_ratio for seg in link.segments])[idx]
    alpha = np.array([seg.alpha_s_per_km for seg in link.segments])[idx]
    x = alpha * link.pulse_length_km(laser)
    factor = -np.expm1(-x) if exact else x
    out = s * laser.peak_power_w * factor * 10.0 ** (-2.0 * loss / 10.0)
    return out[()] if out.ndim == 0 else out


def reflection_power(link: FiberLink, laser: LaserConfig, z_km):
    """Sum of rectangular reflection pulses of width dl_p centred on each
    reflective event."""
    z = np.asarray(z_km, dtype=float)
    out = np.zeros_like(z)
    half = link.pulse_length_km(laser) / 2.0
    for ev in link.events:
        if not ev.reflective:
            continue
        level = laser.peak_power_w * 10.0 ** (ev.reflectance_db / 10.0)
        level *= 10.0 ** (-2.0 * cumulative_loss(link, ev.position_km) / 10.0)
        out = out + np.where(np.abs(z - ev.position_km) <= half, level, 0.0)
    return out[()] if out.ndim == 0 else out


def incident_power(link: FiberLink, laser: LaserConfig, delay_s, exact: bool = False):
    """Expected optical power (W) on the detector at round-trip ``delay_s``."""
    d = np.asarray(delay_s, dtype=float)
    if np.any(d < 0):
        raise FiberRangeError("negative delay")
    z = link.distance_km(d)
    out = backscatter_power(link, laser, z, exact=exact) + reflection_power(link, laser, z)
    return out[()] if np.ndim(out) == 0 else out


def mean_gate_power(link: FiberLink, laser: LaserConfig, gate_starts_s, gate_width_s: float, samples: int = 16):
    """Incident power averaged over each gate (midpoint rule), W.

    Gate tails running past the fiber end see no light.
    """
    starts = np.atleast_1d(np.asarray(gate_starts_s, dtype=float))
    offsets = (np.arange(samples) + 0.5) / samples * gate_width_s
    t = starts[:, None] + offsets[None, :]
    inside = t <= link.round_trip_s
    p = np.zeros_like(t)
    p[inside] = incident_power(link, laser, t[inside])
    return p.mean(axis=1)
