"""Simulation configuration files.

The format is TOML. Recognised tables and keys (all SI units, suffix gives
the unit)::

    [fiber]                    group_speed_km_s
    [[fiber.segments]]         length_km, attenuation_db_per_km, alpha_s_per_km, capture_ratio
    [[fiber.events]]           position_km, loss_db, reflectance_db
    [laser]                    peak_power_w, pulse_width_s, repetition_hz, wavelength_m
    [apd]                      efficiency, dark_rate_hz, dead_time_s
    [apd.afterpulse]           a0, tau_trap_s
    [apd.persistence]          kappa, gamma_hz
    [scheme]                   kind = "basic" | "train" | "free_running" | "rapid", plus that scheme's fields
    [campaign]                 mode = "partial" | "single", dwell_s, snr_floor, overlap_km, target_rate,
                               floor_run, attenuation_db (number or "auto"), seed, shutter_open_s
    [output]                   path, format = "csv"

``fiber``, ``laser`` and ``apd`` are required; everything else has a
default. Unknown tables or keys are rejected.
"""
from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .campaign import CampaignSettings
from .detector import Afterpulsing, ApdModel, Persistence
from .errors import ConfigError, ScheduleError
from .fiber import DEFAULT_CAPTURE_RATIO, DEFAULT_SCATTERING_PER_KM, FiberLink, FiberSegment, LaserConfig, PointEvent
from .schemes import SCHEME_NAMES, Basic, FreeRunning, GatingScheme, RapidGating, TrainOfGates, build_schedule
from .units import DEFAULT_GROUP_SPEED_KM_S, DEFAULT_WAVELENGTH_M

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Three minutes per delay point, as in the reference basic-mode measurement.
DEFAULT_DWELL_S = 180.0

_SEGMENT_KEYS = {"length_km", "attenuation_db_per_km", "alpha_s_per_km", "capture_ratio"}
_EVENT_KEYS = {"position_km", "loss_db", "reflectance_db"}
_LASER_KEYS = {"peak_power_w", "pulse_width_s", "repetition_hz", "wavelength_m"}
_APD_KEYS = {"efficiency", "dark_rate_hz", "dead_time_s", "afterpulse", "persistence"}
_CAMPAIGN_KEYS = {"mode", "dwell_s", "snr_floor", "overlap_km", "target_rate", "floor_run", "attenuation_db", "seed", "shutter_open_s"}
_OUTPUT_KEYS = {"path", "format"}
_TOP_KEYS = {"fiber", "laser", "apd", "scheme", "campaign", "output"}


@dataclass(frozen=True)
class CampaignConfig:
    mode: str = "partial"
    dwell_s: float = DEFAULT_DWELL_S
    snr_floor: float = 4.0
    overlap_km: float = 5.0
    target_rate: float = 0.9
    floor_run: int = 3
    attenuation_db: float | str = "auto"
    seed: int = 0
    shutter_open_s: float | None = None

    def settings(self) -> CampaignSettings:
        return CampaignSettings(
            self.dwell_s, self.snr_floor, self.floor_run, self.overlap_km, self.target_rate
        )


@dataclass(frozen=True)
class OutputConfig:
    path: str = "trace.csv"
    format: str = "csv"


@dataclass(frozen=True)
class SimConfig:
    link: FiberLink
    laser: LaserConfig
    apd: ApdModel
    scheme: GatingScheme
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    assumptions: tuple[str, ...] = ()

    def echo(self) -> dict:
        """Fully materialised configuration, JSON-ready."""
        return {
            "fiber": {
                "group_speed_km_s": self.link.group_speed_km_s,
                "segments": [dataclasses.asdict(s) for s in self.link.segments],
                "events": [_event_dict(e) for e in self.link.events],
            },
            "laser": dataclasses.asdict(self.laser),
            "apd": {
                "efficiency": self.apd.efficiency,
                "dark_rate_hz": self.apd.dark_rate_hz,
                "dead_time_s": self.apd.dead_time_s,
                "afterpulse": dataclasses.asdict(self.apd.afterpulse),
                "persistence": dataclasses.asdict(self.apd.persistence),
            },
            "scheme": scheme_dict(self.scheme),
            "campaign": dataclasses.asdict(self.campaign),
            "output": dataclasses.asdict(self.output),
        }


def _event_dict(e: PointEvent) -> dict:
    d = dataclasses.asdict(e)
    if math.isinf(d["reflectance_db"]):
        d["reflectance_db"] = None
    return d


def scheme_dict(scheme: GatingScheme) -> dict:
    return {"kind": scheme.name, **dataclasses.asdict(scheme)}


def _check_keys(table: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"[{where}] unknown key(s): {', '.join(unknown)}")


def _table(data: dict, key: str, where: str, required: bool = False) -> dict:
    if key not in data:
        if required:
            raise ConfigError(f"missing required table [{where}]")
        return {}
    value = data[key]
    if not isinstance(value, dict):
        raise ConfigError(f"[{where}] must be a table")
    return value


def _number(table: dict, key: str, where: str, default=None, *, integer: bool = False):
    if key not in table:
        if default is None:
            raise ConfigError(f"[{where}] missing required key {key!r}")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"[{where}] {key} must be a number, got {type(v).__name__}")
    if integer:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(f"[{where}] {key} must be an integer")
        return int(v)
    return float(v)


def _build(where: str, factory, **kw):
    try:
        return factory(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def _parse_fiber(data: dict, flags: list[str]) -> FiberLink:
    fiber = _table(data, "fiber", "fiber", required=True)
    _check_keys(fiber, {"segments", "events", "group_speed_km_s"}, "fiber")
    segs = fiber.get("segments")
    if not isinstance(segs, list) or not segs:
        raise ConfigError("[fiber] needs at least one [[fiber.segments]] entry")
    segments = []
    assumed_s = assumed_a = False
    for i, seg in enumerate(segs):
        where = f"fiber.segments[{i}]"
        if not isinstance(seg, dict):
            raise ConfigError(f"[{where}] must be a table")
        _check_keys(seg, _SEGMENT_KEYS, where)
        assumed_s |= "capture_ratio" not in seg
        assumed_a |= "alpha_s_per_km" not in seg
        segments.append(
            _build(
                where,
                FiberSegment,
                length_km=_number(seg, "length_km", where),
                attenuation_db_per_km=_number(seg, "attenuation_db_per_km", where),
                alpha_s_per_km=_number(seg, "alpha_s_per_km", where, DEFAULT_SCATTERING_PER_KM),
                capture_ratio=_number(seg, "capture_ratio", where, DEFAULT_CAPTURE_RATIO),
            )
        )
    if assumed_s:
        flags.append(f"capture ratio S assumed {DEFAULT_CAPTURE_RATIO} (not reported for the measured fiber)")
    if assumed_a:
        flags.append(f"Rayleigh scattering coefficient assumed {DEFAULT_SCATTERING_PER_KM} /km")
    events = []
    raw_events = fiber.get("events", [])
    if not isinstance(raw_events, list):
        raise ConfigError("[fiber] events must be an array of tables")
    for i, ev in enumerate(raw_events):
        where = f"fiber.events[{i}]"
        if not isinstance(ev, dict):
            raise ConfigError(f"[{where}] must be a table")
        _check_keys(ev, _EVENT_KEYS, where)
        events.append(
            _build(
                where,
                PointEvent,
                position_km=_number(ev, "position_km", where),
                loss_db=_number(ev, "loss_db", where, 0.0),
                reflectance_db=_number(ev, "reflectance_db", where, -math.inf),
            )
        )
    if "group_speed_km_s" not in fiber:
        flags.append(f"group speed assumed {DEFAULT_GROUP_SPEED_KM_S:g} km/s")
    speed = _number(fiber, "group_speed_km_s", "fiber", DEFAULT_GROUP_SPEED_KM_S)
    return _build("fiber", FiberLink, segments=tuple(segments), events=tuple(events), group_speed_km_s=speed)


def _parse_laser(data: dict, flags: list[str]) -> LaserConfig:
    t = _table(data, "laser", "laser", required=True)
    _check_keys(t, _LASER_KEYS, "laser")
    if "wavelength_m" not in t:
        flags.append("wavelength assumed 1550 nm")
    return _build(
        "laser",
        LaserConfig,
        peak_power_w=_number(t, "peak_power_w", "laser"),
        pulse_width_s=_number(t, "pulse_width_s", "laser"),
        repetition_hz=_number(t, "repetition_hz", "laser"),
        wavelength_m=_number(t, "wavelength_m", "laser", DEFAULT_WAVELENGTH_M),
    )


def _parse_apd(data: dict, laser: LaserConfig, flags: list[str]) -> ApdModel:
    t = _table(data, "apd", "apd", required=True)
    _check_keys(t, _APD_KEYS, "apd")
    ap = _table(t, "afterpulse", "apd.afterpulse")
    _check_keys(ap, {"a0", "tau_trap_s"}, "apd.afterpulse")
    pers = _table(t, "persistence", "apd.persistence")
    _check_keys(pers, {"kappa", "gamma_hz"}, "apd.persistence")
    d_ap, d_pers, d_apd = Afterpulsing(), Persistence(), ApdModel()
    if set(ap) != {"a0", "tau_trap_s"}:
        flags.append("afterpulse amplitude/trap lifetime partly defaulted (calibration knobs, not measured values)")
    if set(pers) != {"kappa", "gamma_hz"}:
        flags.append("charge persistence coupling/decay partly defaulted (calibrated to a ~2 km dead zone)")
    for key, default in (("efficiency", d_apd.efficiency), ("dark_rate_hz", d_apd.dark_rate_hz), ("dead_time_s", d_apd.dead_time_s)):
        if key not in t:
            flags.append(f"apd {key} defaulted to {default:g}")
    afterpulse = _build("apd.afterpulse", Afterpulsing, a0=_number(ap, "a0", "apd.afterpulse", d_ap.a0), tau_trap_s=_number(ap, "tau_trap_s", "apd.afterpulse", d_ap.tau_trap_s))
    persistence = _build("apd.persistence", Persistence, kappa=_number(pers, "kappa", "apd.persistence", d_pers.kappa), gamma_hz=_number(pers, "gamma_hz", "apd.persistence", d_pers.gamma_hz))
    return _build(
        "apd",
        ApdModel,
        efficiency=_number(t, "efficiency", "apd", d_apd.efficiency),
        dark_rate_hz=_number(t, "dark_rate_hz", "apd", d_apd.dark_rate_hz),
        afterpulse=afterpulse,
        persistence=persistence,
        dead_time_s=_number(t, "dead_time_s", "apd", d_apd.dead_time_s),
        wavelength_m=laser.wavelength_m,
    )


def default_scheme(kind: str, laser: LaserConfig, apd: ApdModel, current: GatingScheme | None = None) -> GatingScheme:
    """A scheme of ``kind`` with parameters derived from the laser, used for
    minimal configs and for ``--scheme`` overrides."""
    width = laser.pulse_width_s if current is None else current.gate_width_s
    if kind == "basic":
        return Basic(delay_step_s=width, gate_width_s=width)
    if kind == "train":
        # one gate per dead time plus gate: every gate armed at low flux
        tau = apd.dead_time_s
        return TrainOfGates(gate_rate_hz=1.0 / (tau + 2.0 * width), gate_width_s=width)
    if kind == "free_running":
        return FreeRunning(resolution_s=width)
    if kind == "rapid":
        return RapidGating()
    raise ConfigError(f"unknown scheme kind {kind!r}; expected one of {', '.join(SCHEME_NAMES)}")


def _parse_scheme(data: dict, laser: LaserConfig, apd: ApdModel, flags: list[str]) -> GatingScheme:
    t = dict(_table(data, "scheme", "scheme"))
    if not t:
        flags.append("scheme defaulted to basic mode with gate width = delay step = pulse width")
        return default_scheme("basic", laser, apd)
    kind = t.pop("kind", None)
    if kind not in SCHEME_NAMES:
        raise ConfigError(f"[scheme] kind must be one of {', '.join(SCHEME_NAMES)}, got {kind!r}")
    cls = SCHEME_NAMES[kind]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(t, set(fields), "scheme")
    kw = {}
    for key, value in t.items():
        integer = key in ("gates_per_point", "start_delay_shifts")
        kw[key] = _number(t, key, "scheme", integer=integer)
    return _build("scheme", cls, **kw)


def _parse_campaign(data: dict, flags: list[str]) -> CampaignConfig:
    t = _table(data, "campaign", "campaign")
    _check_keys(t, _CAMPAIGN_KEYS, "campaign")
    d = CampaignConfig()
    mode = t.get("mode", d.mode)
    if mode not in ("partial", "single"):
        raise ConfigError(f"[campaign] mode must be 'partial' or 'single', got {mode!r}")
    att = t.get("attenuation_db", d.attenuation_db)
    if att != "auto":
        att = _number(t, "attenuation_db", "campaign")
        if att < 0:
            raise ConfigError("[campaign] attenuation_db must be >= 0 or 'auto'")
    if "dwell_s" not in t:
        flags.append(f"dwell defaulted to {DEFAULT_DWELL_S:g} s per delay point")
    if "overlap_km" not in t and mode == "partial":
        flags.append("partial-trace overlap defaulted to 5 km")
    shutter = t.get("shutter_open_s")
    cfg = CampaignConfig(
        mode=mode,
        dwell_s=_number(t, "dwell_s", "campaign", d.dwell_s),
        snr_floor=_number(t, "snr_floor", "campaign", d.snr_floor),
        overlap_km=_number(t, "overlap_km", "campaign", d.overlap_km),
        target_rate=_number(t, "target_rate", "campaign", d.target_rate),
        floor_run=_number(t, "floor_run", "campaign", d.floor_run, integer=True),
        attenuation_db=att,
        seed=_number(t, "seed", "campaign", d.seed, integer=True),
        shutter_open_s=None if shutter is None else _number(t, "shutter_open_s", "campaign"),
    )
    _build("campaign", CampaignSettings, dwell_s=cfg.dwell_s, snr_floor=cfg.snr_floor, floor_run=cfg.floor_run, overlap_km=cfg.overlap_km, target_rate=cfg.target_rate)
    if cfg.seed < 0:
        raise ConfigError("[campaign] seed must be >= 0")
    return cfg


def _parse_output(data: dict) -> OutputConfig:
    t = _table(data, "output", "output")
    _check_keys(t, _OUTPUT_KEYS, "output")
    fmt = t.get("format", "csv")
    if fmt != "csv":
        raise ConfigError(f"[output] format must be 'csv', got {fmt!r}")
    path = t.get("path", OutputConfig.path)
    if not isinstance(path, str) or not path:
        raise ConfigError("[output] path must be a non-empty string")
    return OutputConfig(path, fmt)


def validate(cfg: SimConfig) -> None:
    """Cross-section checks: a schedule must be buildable."""
    try:
        build_schedule(cfg.scheme, cfg.laser, cfg.link, cfg.apd)
    except ScheduleError as exc:
        raise ConfigError(f"[scheme] {exc}") from None


def parse_config(text: str) -> SimConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {getattr(exc, 'msg', str(exc))}", getattr(exc, "lineno", None), getattr(exc, "colno", None)) from None
    _check_keys(data, _TOP_KEYS, "top level")
    flags: list[str] = []
    link = _parse_fiber(data, flags)
    laser = _parse_laser(data, flags)
    apd = _parse_apd(data, laser, flags)
    scheme = _parse_scheme(data, laser, apd, flags)
    campaign = _parse_campaign(data, flags)
    output = _parse_output(data)
    cfg = SimConfig(link, laser, apd, scheme, campaign, output, tuple(flags))
    validate(cfg)
    return cfg


def load_config(path) -> SimConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)
