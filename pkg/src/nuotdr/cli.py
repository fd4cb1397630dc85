"""Command line interface.

Exit codes::

    0  success
    1  internal error
    2  usage error
    3  configuration error (parse or validation)
    4  campaign error (e.g. unreachable target rate)
    5  saturation (some bin had every activated gate fire; CSV still written)
    6  partial coverage (campaign could not measure the whole link; CSV still written)
    7  comparison error (configs do not share a fiber)
    8  stitch error
    9  I/O error

When both 5 and 6 apply, 5 is returned.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, analytics, kernel
from .campaign import CampaignResult, PartialTrace, auto_attenuate, partial_trace_campaign, stitch_traces
from .config import SimConfig, default_scheme, load_config, scheme_dict, validate
from .detector import ApdModel
from .engine import Trace, dark_baseline, read_trace_csv, run_acquisition, write_trace_csv
from .errors import CampaignError, ComparisonError, ConfigError, SaturationError, ScheduleError, StitchError
from .fiber import FiberSegment, LaserConfig
from .metrics import measure_dead_zone
from .schemes import SCHEME_NAMES, build_schedule, free_running_threshold, max_gate_frequency
from .units import DEFAULT_WAVELENGTH_M, dbm_to_w

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CAMPAIGN = 4
EXIT_SATURATION = 5
EXIT_PARTIAL = 6
EXIT_COMPARISON = 7
EXIT_STITCH = 8
EXIT_IO = 9

log = logging.getLogger("nuotdr")

_COMMON_DEFAULTS = {"config": None, "seed": None, "out": None, "format": "csv", "report": None, "workers": 1, "verbose": False}


class UsageError(Exception):
    pass


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _clean(o):
    """Map non-finite floats to strings so the report stays strict JSON."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return str(float(o))
    return o


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n")


def _report_path(out: Path, explicit: str | None) -> Path:
    return Path(explicit) if explicit else out.with_suffix(".report.json")


# --- simulate ----------------------------------------------------------------


def _apply_overrides(cfg: SimConfig, args) -> SimConfig:
    campaign, output, scheme = cfg.campaign, cfg.output, cfg.scheme
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be >= 0")
        campaign = dataclasses.replace(campaign, seed=args.seed)
    if args.out is not None:
        output = dataclasses.replace(output, path=args.out)
    flags = list(cfg.assumptions)
    if getattr(args, "scheme", None):
        scheme = default_scheme(args.scheme, cfg.laser, cfg.apd, cfg.scheme)
        flags.append(f"scheme overridden on the command line: {args.scheme} with derived parameters")
    new = dataclasses.replace(cfg, campaign=campaign, output=output, scheme=scheme, assumptions=tuple(flags))
    validate(new)
    return new


def _derived(cfg: SimConfig) -> dict:
    sched = build_schedule(cfg.scheme, cfg.laser, cfg.link, cfg.apd)
    seg = cfg.link.segments[0]
    width = sched.gate_width_s
    out = {
        "backend": kernel.BACKEND,
        "duty_cycle": sched.duty_cycle,
        "gates_per_pulse": sched.gates_per_pulse,
        "bins": sched.n_bins,
        "gate_width_s": width,
        "dead_time_s": sched.dead_time_s,
        "round_trip_s": cfg.link.round_trip_s,
        "max_repetition_hz": cfg.link.max_repetition_hz,
        "nep_norm0_w_per_rthz": analytics.nep_norm_rates(cfg.apd.efficiency, 0.0, cfg.apd.dark_rate_hz, cfg.apd.wavelength_m),
        "initial_backscatter_w": analytics.initial_backscatter(seg, cfg.laser, cfg.link.group_speed_km_s),
        "free_running_threshold_photons_per_s": (
            1.0 / (cfg.apd.efficiency * sched.dead_time_s) if sched.dead_time_s > 0 else math.inf
        ),
    }
    if sched.kind == "basic":
        out["predicted_dynamic_range_db"] = analytics.dynamic_range_for(
            seg, cfg.laser, cfg.apd, cfg.campaign.dwell_s, width, cfg.link.group_speed_km_s
        )
    return out


def _run_config(cfg: SimConfig, workers: int, dark_run: bool) -> tuple[Trace, CampaignResult | None, dict]:
    c = cfg.campaign
    baseline = None
    if dark_run:
        baseline = dark_baseline(cfg.link, cfg.laser, cfg.apd, cfg.scheme, c.dwell_s, c.seed, workers=workers)
    if c.mode == "partial":
        result = partial_trace_campaign(
            cfg.link, cfg.laser, cfg.apd, cfg.scheme, c.settings(), c.seed,
            workers=workers, dark_baseline=baseline, shutter_open_s=c.shutter_open_s,
        )
        info = {
            "partials": [
                {"index": p.index, "attenuation_db": p.attenuation_db, "start_km": p.span_km[0], "stop_km": p.span_km[1], "overlap_km": p.overlap_span_km}
                for p in result.partials
            ],
            "unmeasured_from_km": result.unmeasured_from_km,
            "wall_time_simulated_s": result.wall_time_simulated_s,
        }
        return result.stitched, result, info
    if c.attenuation_db == "auto":
        att = auto_attenuate(cfg.link, cfg.laser, cfg.apd, cfg.scheme, c.target_rate, seed=c.seed)
    else:
        att = float(c.attenuation_db)
    trace = run_acquisition(
        cfg.link, cfg.laser, cfg.apd, cfg.scheme, c.dwell_s, att, c.seed,
        workers=workers, dark_baseline=baseline, shutter_open_s=c.shutter_open_s,
    )
    return trace, None, {"attenuation_db": att, "wall_time_simulated_s": trace.wall_time_s}


def _trace_summary(trace: Trace) -> dict:
    flags = trace.flags
    return {
        "bins": len(trace),
        "saturated_bins": flags.count("saturated"),
        "no_data_bins": flags.count("no_data"),
        "below_floor_bins": flags.count("below_floor"),
        "detections": int(trace.detections.sum()),
        "reference_power_w": trace.reference_w,
    }


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(_need_config(args)), args)
    out = Path(cfg.output.path)
    log.info("simulating %s scheme, mode %s, seed %d", cfg.scheme.name, cfg.campaign.mode, cfg.campaign.seed)
    trace, result, info = _run_config(cfg, args.workers, args.dark_run)
    code = EXIT_OK
    if "saturated" in trace.flags:
        code = EXIT_SATURATION
    elif result is not None and not result.complete:
        code = EXIT_PARTIAL
    assumptions = list(cfg.assumptions)
    assumptions.append("dark counts subtracted from a measured dark run" if args.dark_run else "dark counts subtracted analytically (p_dc * activated gates)")
    write_trace_csv(trace, out)
    report = {
        "command": "simulate",
        "version": __version__,
        "inputs": cfg.echo(),
        "derived": _derived(cfg),
        "assumptions": assumptions,
        "results": {**info, **_trace_summary(trace)},
        "exit_code": code,
    }
    _dump_json(report, _report_path(out, args.report))
    log.info("wrote %s", out)
    return code


# --- analyze -----------------------------------------------------------------


def _emit(args, values: dict, text: str) -> int:
    print(text)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(values.keys())
    w.writerow([format(v, ".10g") if isinstance(v, float) else v for v in values.values()])
    print(buf.getvalue(), end="")
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    return EXIT_OK


def cmd_nep(args) -> int:
    pc = analytics.nep_norm_rates(args.efficiency, 0.0, args.dark_rate_hz, args.wavelength_m)
    values = {"efficiency": args.efficiency, "dark_rate_hz": args.dark_rate_hz, "nep_norm0_w_per_rthz": pc}
    text = f"NEP_norm0 = {pc:.3e} W/sqrt(Hz)"
    if args.power_dbm is not None:
        apd = ApdModel(efficiency=args.efficiency, dark_rate_hz=args.dark_rate_hz, wavelength_m=args.wavelength_m)
        at = analytics.nep_norm_at_power(apd, float(dbm_to_w(args.power_dbm)))
        values["power_dbm"] = args.power_dbm
        values["nep_norm_w_per_rthz"] = at
        text += f"\nNEP_norm at {args.power_dbm:g} dBm = {at:.3e} W/sqrt(Hz)"
    return _emit(args, values, text)


def cmd_dynr(args) -> int:
    seg = FiberSegment(1.0, 0.2, args.alpha_s_per_km, args.capture_ratio)
    laser = LaserConfig(args.peak_power_w, args.pulse_width_s, args.repetition_hz, args.wavelength_m)
    apd = ApdModel(efficiency=args.efficiency, dark_rate_hz=args.dark_rate_hz, wavelength_m=args.wavelength_m)
    p0 = analytics.initial_backscatter(seg, laser, args.group_speed_km_s)
    dr = analytics.dynamic_range_for(seg, laser, apd, args.time_s, args.gate_width_s, args.group_speed_km_s)
    values = {"initial_backscatter_w": p0, "dynamic_range_db": dr}
    return _emit(args, values, f"P_BS0 = {p0:.3e} W, dynamic range = {dr:.2f} dB")


def cmd_time(args) -> int:
    power = float(dbm_to_w(args.power_dbm))
    if args.nep_norm is not None:
        nep = args.nep_norm
    else:
        apd = ApdModel(efficiency=args.efficiency, dark_rate_hz=args.dark_rate_hz, wavelength_m=args.wavelength_m)
        nep = analytics.nep_norm_at_power(apd, power)
    t = analytics.measurement_time(args.snr, nep, args.bandwidth_hz, power, args.f_pulse_hz)
    values = {"snr": args.snr, "nep_norm_w_per_rthz": nep, "power_w": power, "time_s": t}
    return _emit(args, values, f"t = {t:.3g} s (NEP_norm {nep:.3e} W/sqrt(Hz))")


def cmd_twopoint(args) -> int:
    a = analytics.two_point_advantage(args.x_db)
    return _emit(args, {"x_db": args.x_db, "alpha": a}, f"alpha={a:.3f} (pulse width factor 1/{1 / a:.1f})")


def cmd_ratio(args) -> int:
    r = analytics.time_ratio(analytics.ConventionalDetector(args.conv_nep), args.pc_nep)
    return _emit(args, {"conv_nep": args.conv_nep, "pc_nep": args.pc_nep, "time_ratio": r}, f"time ratio = {r:.4g}")


def cmd_plan_gates(args) -> int:
    lim = max_gate_frequency(args.p_sig, args.tau_s, args.act_min, args.gate_width_s)
    values = {
        "f_gate_max_hz": lim.integer_hz,
        "gates_per_dead_time": lim.gates_per_dead_time,
        "f_gate_continuous_hz": lim.continuous_hz,
        "prefer_free_running": lim.free_running,
    }
    text = f"f_gate,max = {lim.integer_hz / 1e6:.4g} MHz ({lim.gates_per_dead_time} gates per dead time; continuous root {lim.continuous_hz / 1e6:.4g} MHz)"
    if args.efficiency is not None:
        thr = free_running_threshold(args.efficiency, args.tau_s, args.act_min)
        values.update(b=thr.b, free_running_photon_rate=thr.photon_rate)
        text += f"\nfree running below mu = {thr.photon_rate:.3g} /s (b = {thr.b:.3f})"
    return _emit(args, values, text)


TABLE_ACT_MIN = (0.2, 0.4, 0.6, 0.8)
TABLE_P_SIG = (0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5)


def cmd_plan_table(args) -> int:
    # f*tau depends on p and a_min only, so the table is dead-time free
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["activation_min", "b", "p_sig", "f_tau_continuous", "f_tau_integer"])
    for a in TABLE_ACT_MIN:
        b = free_running_threshold(1.0, 1.0, a).b
        for p in TABLE_P_SIG:
            lim = max_gate_frequency(p, 1.0, a)
            w.writerow([a, format(b, ".6g"), p, format(lim.continuous_hz, ".6g"), lim.gates_per_dead_time])
    print(buf.getvalue(), end="")
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    return EXIT_OK


def cmd_plan(args) -> int:
    if args.table:
        return cmd_plan_table(args)
    if args.p_sig is not None:
        for name in ("tau_s", "act_min"):
            if getattr(args, name) is None:
                raise UsageError(f"plan with --p-sig needs --{name.replace('_', '-')}")
        return cmd_plan_gates(args)
    cfg = _apply_overrides(load_config(_need_config(args)), args)
    derived = _derived(cfg)
    derived["scheme"] = scheme_dict(cfg.scheme)
    text = "\n".join(f"{k} = {v}" for k, v in sorted(derived.items()) if k != "scheme")
    print(f"scheme = {cfg.scheme.name}\n{text}")
    if args.out:
        _dump_json({"command": "plan", "inputs": cfg.echo(), "derived": derived, "assumptions": list(cfg.assumptions)}, Path(args.out))
    return EXIT_OK


# --- compare -----------------------------------------------------------------


def _time_to_floor(trace: Trace, floor: float) -> float:
    snr = trace.snr
    snr = snr[np.isfinite(snr) & (snr > 0)]
    if not len(snr):
        return math.inf
    return trace.wall_time_s * (floor / float(np.median(snr))) ** 2


def cmd_compare(args) -> int:
    cfg_a = _apply_overrides(load_config(args.config_a), args)
    cfg_b = _apply_overrides(load_config(args.config_b), args)
    if cfg_a.link != cfg_b.link:
        raise ComparisonError("configurations do not share the same fiber link")
    runs = []
    for cfg in (cfg_a, cfg_b):
        trace, _, _ = _run_config(cfg, args.workers, False)
        runs.append((cfg, trace))
    summary = {}
    for tag, (cfg, trace) in zip("ab", runs):
        s = {
            "scheme": cfg.scheme.name,
            "detection_rate_hz": float(trace.detections.sum()) / trace.wall_time_s,
            "wall_time_s": trace.wall_time_s,
            "time_to_snr_floor_s": _time_to_floor(trace, cfg.campaign.snr_floor),
        }
        if args.event_km is not None:
            dz = measure_dead_zone(trace, args.event_km)
            s["dead_zone_km"] = dz.length_km
            s["dead_zone_recovered"] = dz.recovered
        summary[tag] = s
    summary["delta"] = {
        k: summary["b"][k] - summary["a"][k]
        for k in ("detection_rate_hz", "wall_time_s", "time_to_snr_floor_s", "dead_zone_km")
        if k in summary["a"] and isinstance(summary["a"][k], float)
    }

    out = Path(args.out or "compare.csv")
    bins_a = {round(b.delay_s * 1e12): b for b in runs[0][1].bins}
    bins_b = {round(b.delay_s * 1e12): b for b in runs[1][1].bins}
    nan = float("nan")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["distance_km", "delay_s", "a_gates_activated", "a_detections", "a_trace_db", "b_gates_activated", "b_detections", "b_trace_db", "delta_trace_db"])
        for key in sorted(set(bins_a) | set(bins_b)):
            a, b = bins_a.get(key), bins_b.get(key)
            ref = a or b
            da = a.db_value if a else nan
            db = b.db_value if b else nan
            w.writerow(
                [
                    format(ref.distance_km, ".16e"),
                    format(ref.delay_s, ".16e"),
                    a.gates_activated if a else "",
                    a.detections if a else "",
                    format(da, ".16e"),
                    b.gates_activated if b else "",
                    b.detections if b else "",
                    format(db, ".16e"),
                    format(db - da, ".16e"),
                ]
            )
    _dump_json({"command": "compare", "summary": summary, "inputs": {"a": cfg_a.echo(), "b": cfg_b.echo()}}, _report_path(out, args.report))
    print(json.dumps(_clean(summary), indent=2, sort_keys=True))
    return EXIT_OK


# --- stitch ------------------------------------------------------------------


def cmd_stitch(args) -> int:
    partials = []
    for k, path in enumerate(args.partials):
        tr = read_trace_csv(path)
        if not len(tr):
            raise StitchError(f"{path} holds no bins")
        bins = tuple(dataclasses.replace(b, provenance=k) for b in tr.bins)
        partials.append(PartialTrace(Trace(bins, tr.reference_w, tr.gate_width_s, tr.kind), tr[0].attenuation_db, 0.0, k))
    stitched = stitch_traces(partials)
    out = Path(args.out or "stitched.csv")
    write_trace_csv(stitched, out)
    print(f"stitched {len(partials)} partial traces into {len(stitched)} bins -> {out}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _need_config(args) -> str:
    if not args.config:
        raise UsageError("--config is required")
    return args.config


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by
    # the subparser's default; _COMMON_DEFAULTS fills the gaps afterwards.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="TOML simulation config")
    common.add_argument("--seed", type=int, help="override campaign.seed")
    common.add_argument("--out", help="output path (CSV)")
    common.add_argument("--format", choices=["csv"])
    common.add_argument("--report", help="report JSON path (default: <out>.report.json)")
    common.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--verbose", "-v", action="store_true")

    p = argparse.ArgumentParser(prog="nuotdr", description="Photon-counting OTDR simulator", parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run an acquisition or partial-trace campaign")
    s.add_argument("--scheme", choices=sorted(SCHEME_NAMES), help="swap the bias scheme")
    s.add_argument("--dark-run", action="store_true", help="subtract a measured dark baseline")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", parents=[common], help="closed-form predictors")
    asub = a.add_subparsers(dest="analysis", required=True)
    wl = dict(type=float, default=DEFAULT_WAVELENGTH_M)

    x = asub.add_parser("nep", parents=[common])
    x.add_argument("--efficiency", type=float, default=0.1)
    x.add_argument("--dark-rate-hz", type=float, default=2000.0)
    x.add_argument("--power-dbm", type=float)
    x.add_argument("--wavelength-m", **wl)
    x.set_defaults(func=cmd_nep)

    x = asub.add_parser("dynr", parents=[common])
    x.add_argument("--peak-power-w", type=float, required=True)
    x.add_argument("--pulse-width-s", type=float, required=True)
    x.add_argument("--repetition-hz", type=float, required=True)
    x.add_argument("--time-s", type=float, required=True)
    x.add_argument("--gate-width-s", type=float)
    x.add_argument("--efficiency", type=float, default=0.1)
    x.add_argument("--dark-rate-hz", type=float, default=2000.0)
    x.add_argument("--alpha-s-per-km", type=float, default=0.04)
    x.add_argument("--capture-ratio", type=float, default=0.0015)
    x.add_argument("--group-speed-km-s", type=float, default=2e5)
    x.add_argument("--wavelength-m", **wl)
    x.set_defaults(func=cmd_dynr)

    x = asub.add_parser("time", parents=[common])
    x.add_argument("--snr", type=float, default=4.0)
    x.add_argument("--bandwidth-hz", type=float, required=True)
    x.add_argument("--power-dbm", type=float, required=True)
    x.add_argument("--f-pulse-hz", type=float, required=True)
    x.add_argument("--nep-norm", type=float)
    x.add_argument("--efficiency", type=float, default=0.1)
    x.add_argument("--dark-rate-hz", type=float, default=2000.0)
    x.add_argument("--wavelength-m", **wl)
    x.set_defaults(func=cmd_time)

    x = asub.add_parser("twopoint", parents=[common])
    x.add_argument("--x-db", type=float, required=True)
    x.set_defaults(func=cmd_twopoint)

    x = asub.add_parser("ratio", parents=[common])
    x.add_argument("--conv-nep", type=float, required=True)
    x.add_argument("--pc-nep", type=float, required=True)
    x.set_defaults(func=cmd_ratio)

    for parent in (asub, sub):
        x = parent.add_parser("plan", parents=[common], help="gate-rate planner, or schedule summary with --config")
        x.add_argument("--p-sig", type=float)
        x.add_argument("--tau-s", type=float)
        x.add_argument("--act-min", type=float)
        x.add_argument("--gate-width-s", type=float)
        x.add_argument("--efficiency", type=float)
        x.add_argument("--scheme", choices=sorted(SCHEME_NAMES))
        x.add_argument("--table", action="store_true", help="print f*tau and b over a grid as CSV")
        x.set_defaults(func=cmd_plan)

    c = sub.add_parser("compare", parents=[common], help="run two configs on the same fiber")
    c.add_argument("config_a")
    c.add_argument("config_b")
    c.add_argument("--event-km", type=float, help="also compare dead zones behind this event")
    c.set_defaults(func=cmd_compare)

    st = sub.add_parser("stitch", parents=[common], help="stitch partial-trace CSVs offline")
    st.add_argument("partials", nargs="+")
    st.set_defaults(func=cmd_stitch)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for key, value in _COMMON_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ScheduleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CampaignError as exc:
        print(f"campaign error: {exc}", file=sys.stderr)
        return EXIT_CAMPAIGN
    except SaturationError as exc:
        print(f"saturation: {exc}", file=sys.stderr)
        return EXIT_SATURATION
    except ComparisonError as exc:
        print(f"comparison error: {exc}", file=sys.stderr)
        return EXIT_COMPARISON
    except StitchError as exc:
        print(f"stitch error: {exc}", file=sys.stderr)
        return EXIT_STITCH
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
