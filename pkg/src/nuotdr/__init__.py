"""Photon-counting OTDR simulator.

Fiber backscatter model, Geiger-mode APD statistics, bias-scheme schedules,
Monte Carlo trace acquisition and closed-form performance predictors.
"""
from .analytics import (
    ConventionalDetector,
    NepInput,
    dynamic_range,
    measurement_time,
    nep,
    nep0,
    nep_norm,
    nep_norm0,
    snr,
    time_ratio,
    two_point_advantage,
)
from .campaign import CampaignResult, CampaignSettings, PartialTrace, auto_attenuate, partial_trace_campaign, stitch_traces
from .detector import Afterpulsing, ApdModel, ApdState, Persistence, detection_probability, estimate_power, sample_gate
from .engine import Trace, TraceBin, read_trace_csv, run_acquisition, write_trace_csv
from .fiber import FiberLink, FiberSegment, LaserConfig, PointEvent, incident_power
from .kernel import BACKEND
from .metrics import measure_dead_zone
from .schemes import Basic, FreeRunning, RapidGating, TrainOfGates, build_schedule, max_gate_frequency

__version__ = "0.1.0"

__all__ = [
    "Afterpulsing",
    "ApdModel",
    "ApdState",
    "BACKEND",
    "Basic",
    "CampaignResult",
    "CampaignSettings",
    "ConventionalDetector",
    "FiberLink",
    "FiberSegment",
    "FreeRunning",
    "LaserConfig",
    "NepInput",
    "PartialTrace",
    "Persistence",
    "PointEvent",
    "RapidGating",
    "Trace",
    "TraceBin",
    "TrainOfGates",
    "auto_attenuate",
    "build_schedule",
    "detection_probability",
    "dynamic_range",
    "estimate_power",
    "incident_power",
    "max_gate_frequency",
    "measure_dead_zone",
    "measurement_time",
    "nep",
    "nep0",
    "nep_norm",
    "nep_norm0",
    "partial_trace_campaign",
    "read_trace_csv",
    "run_acquisition",
    "sample_gate",
    "snr",
    "stitch_traces",
    "time_ratio",
    "two_point_advantage",
    "write_trace_csv",
]
