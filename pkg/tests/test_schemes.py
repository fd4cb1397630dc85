import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nuotdr.detector import ApdModel
from nuotdr.errors import ScheduleError
from nuotdr.fiber import FiberLink, LaserConfig
from nuotdr.schemes import (
    Basic,
    FreeRunning,
    RapidGating,
    TrainOfGates,
    activation_probability,
    build_schedule,
    detection_rate,
    free_running_threshold,
    max_gate_frequency,
    recommend_scheme,
    shifts_for_resolution,
)

LINK200 = FiberLink.uniform(200)
LASER500 = LaserConfig(1e-3, 100e-9, 500)


def test_basic_200km_3us_grid():
    sched = build_schedule(Basic(3e-6, 100e-9), LASER500, LINK200)
    assert sched.n_bins == 667
    assert all(len(t) == 1 for t in sched.timelines)
    assert sched.bin_delays[1] - sched.bin_delays[0] == pytest.approx(3e-6)


def test_train_interleaving_shifts():
    assert shifts_for_resolution(4e6, 0.005, 2e5) == 5
    link = FiberLink.uniform(20)
    laser = LaserConfig(1e-3, 1e-8, 5000)
    one = build_schedule(TrainOfGates(4e6, 10e-9, start_delay_shifts=1), laser, link)
    five = build_schedule(TrainOfGates(4e6, 10e-9, start_delay_shifts=5), laser, link)
    assert len(five.timelines) == 5
    assert five.n_bins == pytest.approx(5 * one.n_bins, abs=5)
    assert np.diff(five.bin_delays).max() == pytest.approx(50e-9)


def test_free_running_duty_cycle_one():
    sched = build_schedule(FreeRunning(100e-9), LASER500, LINK200)
    assert sched.duty_cycle == 1.0
    assert len(sched.timelines) == 1


def test_rapid_gating_bins():
    link = FiberLink.uniform(1)
    laser = LaserConfig(1e-3, 1e-8, 1e5)
    sched = build_schedule(RapidGating(), laser, link)
    assert sched.gate_width_s == 200e-12
    assert sched.duty_cycle == pytest.approx(0.2)
    assert sched.n_bins == pytest.approx(link.round_trip_s / 50e-9, abs=1)


def test_gate_rate_invariant():
    with pytest.raises(ScheduleError, match="f_gate"):
        build_schedule(TrainOfGates(1e7, 100e-9), LASER500, LINK200)


def test_window_beyond_round_trip_rejected():
    with pytest.raises(ScheduleError):
        build_schedule(Basic(3e-6, 1e-7, window_stop_s=3e-3), LASER500, LINK200)


def test_repetition_too_fast_rejected():
    with pytest.raises(ScheduleError):
        build_schedule(Basic(3e-6, 1e-7), LaserConfig(1e-3, 1e-7, 600), LINK200)


@given(
    st.sampled_from(["basic", "train", "free"]),
    st.floats(1e-8, 1e-6),
    st.floats(5.0, 40.0),
)
def test_gates_never_overlap(kind, width, length):
    link = FiberLink.uniform(length)
    laser = LaserConfig(1e-3, 1e-7, link.max_repetition_hz)
    scheme = {
        "basic": Basic(2 * width, width),
        "train": TrainOfGates(0.5 / width, width, start_delay_shifts=2),
        "free": FreeRunning(width),
    }[kind]
    sched = build_schedule(scheme, laser, link)
    for starts in sched.timelines:
        assert np.all(np.diff(starts) >= width * (1 - 1e-9))
        assert starts[-1] + width <= link.round_trip_s * (1 + 1e-9)
    assert sched.duty_cycle <= 1.0


def test_activation_probability():
    assert activation_probability(1, 0.3) == 1.0
    assert activation_probability(5, 0.25) == pytest.approx(0.75**4)
    assert activation_probability(5, 0.25) == pytest.approx(0.3164, abs=1e-4)
    with pytest.raises(ValueError):
        activation_probability(0, 0.1)


def test_max_gate_frequency_worked_example():
    lim = max_gate_frequency(0.25, 1e-6, 0.4)
    assert lim.gates_per_dead_time == 4
    assert lim.integer_hz == pytest.approx(4e6)
    assert lim.continuous_hz * 1e-6 == pytest.approx(math.log(0.4) / math.log(0.75))
    assert activation_probability(4, 0.25) >= 0.4 > activation_probability(5, 0.25)


def test_max_gate_frequency_symmetry_and_limits():
    assert max_gate_frequency(0.5, 1e-6, 0.5).continuous_hz == pytest.approx(1e6)
    assert max_gate_frequency(0.25, 1e-6, 0.999999).continuous_hz < 10.0
    unbounded = max_gate_frequency(0.0, 1e-6, 0.4, gate_width_s=1e-7)
    assert unbounded.free_running and unbounded.integer_hz == pytest.approx(1e7)


def test_max_gate_frequency_cap_flags_free_running():
    lim = max_gate_frequency(1e-4, 1e-6, 0.4, gate_width_s=100e-9)
    assert lim.free_running
    assert lim.integer_hz <= 1e7


@given(st.floats(0.01, 0.9), st.floats(0.05, 0.95), st.floats(1e-7, 1e-4))
def test_max_gate_frequency_keeps_activation(p, amin, tau):
    lim = max_gate_frequency(p, tau, amin)
    n = lim.gates_per_dead_time
    assert activation_probability(max(n, 1), p) >= amin * (1 - 1e-9)
    assert activation_probability(n + 1, p) < amin * (1 + 1e-9)


@pytest.mark.parametrize("amin,b", [(0.2, 1.61), (0.4, 0.92), (0.6, 0.51), (0.8, 0.22)])
def test_b_constants(amin, b):
    assert free_running_threshold(0.1, 10e-6, amin).b == pytest.approx(b, abs=0.005)


def test_detection_rate_limits():
    assert detection_rate(0.1, 1e6, 1.0, 10e-6) == pytest.approx(1 / (1e-5 + 1e-5))
    assert detection_rate(0.1, 0.0, 1.0, 1e-5) == 0.0
    with pytest.raises(ValueError):
        detection_rate(0.1, 1e6, 1.5, 1e-5)


@given(st.floats(1e2, 1e9), st.floats(1e-9, 1e-4))
def test_detection_rate_bounded_by_dead_time(mu, tau):
    assert detection_rate(0.1, mu, 1.0, tau) < 1.0 / tau


def test_recommendation_threshold():
    apd = ApdModel(efficiency=0.1)
    fr = FreeRunning(1e-7, dead_time_s=10e-6)
    rec = recommend_scheme(5e5, apd, RapidGating(), fr)
    assert rec.threshold_photon_rate == pytest.approx(1e6)
    assert isinstance(rec.scheme, FreeRunning)
    assert isinstance(recommend_scheme(2e6, apd, RapidGating(), fr).scheme, RapidGating)


def test_narrow_window_drops_unreachable_shifts():
    link = FiberLink.uniform(20)
    laser = LaserConfig(1e-3, 1e-6, 4000)
    sched = build_schedule(TrainOfGates(2e5, 1e-6, start_delay_shifts=3, window_stop_s=3e-6), laser, link)
    assert len(sched.timelines) == sched.n_bins == 2
    assert all(len(t) for t in sched.timelines)
