import math
import os
import subprocess
import sys

import numpy as np
import pytest

from nuotdr import _kernel_py, kernel
from nuotdr.detector import Afterpulsing, ApdModel, ApdState, Persistence, sample_gate
from nuotdr.rng import substream

try:
    from nuotdr import _kernel as _kernel_c
except ImportError:  # pragma: no cover - extension not built
    _kernel_c = None


def _inputs(seed, n_pulses=300, n_gates=40, a0=0.1):
    rng = np.random.default_rng(seed)
    starts = np.sort(rng.uniform(0, 90e-6, n_gates))
    starts = starts + 150e-9 * np.arange(n_gates)  # keep gates apart
    bins = np.arange(n_gates, dtype=np.int64) // 2
    return dict(
        starts=starts,
        bins=bins,
        h_sig=rng.uniform(0, 0.5, n_gates),
        h_dark=2e-4,
        h_pers=rng.uniform(0, 0.01, n_gates),
        width=100e-9,
        period=200e-6,
        first_pulse=0,
        dead_time=rng.uniform(0, 5e-6),
        a0=a0,
        tau_trap=2e-6,
        m=10.0,
        u=rng.random((n_pulses, n_gates)),
    )


def _run(impl, kw):
    nb = int(kw["bins"].max()) + 1
    out = dict(
        state=np.array([0.0, 0.0, -math.inf]),
        applied=np.zeros(nb, np.int64),
        activated=np.zeros(nb, np.int64),
        detected=np.zeros(nb, np.int64),
        causes=np.zeros((nb, 4), np.int64),
    )
    impl.simulate_block(
        kw["starts"], kw["bins"], kw["h_sig"], kw["h_dark"], kw["h_pers"], kw["width"], kw["period"],
        kw["first_pulse"], kw["dead_time"], kw["a0"], kw["tau_trap"], kw["m"], kw["u"], out["state"],
        out["applied"], out["activated"], out["detected"], out["causes"],
    )
    return out


@pytest.mark.skipif(_kernel_c is None, reason="compiled kernel not built")
@pytest.mark.parametrize("seed", range(5))
def test_compiled_and_python_kernels_identical(seed):
    kw = _inputs(seed, a0=0.0 if seed == 4 else 0.1)
    a, b = _run(_kernel_py, kw), _run(_kernel_c, kw)
    for key in a:
        assert np.array_equal(a[key], b[key]), key


class _Replay:
    """Feeds pre-drawn uniforms to ``sample_gate`` one at a time."""

    def __init__(self, u):
        self._it = iter(u.ravel().tolist())

    def random(self):
        return next(self._it)


def test_kernel_matches_sample_gate_loop():
    kw = _inputs(7, n_pulses=100, n_gates=20)
    kw["h_pers"] = np.zeros_like(kw["h_pers"])
    width = kw["width"]
    dark_rate = kw["h_dark"] / width
    apd = ApdModel(
        efficiency=0.1, dark_rate_hz=dark_rate, afterpulse=Afterpulsing(kw["a0"], kw["tau_trap"]),
        persistence=Persistence(0.0), dead_time_s=kw["dead_time"],
    )
    powers = kw["h_sig"] * apd.photon_energy / (apd.efficiency * width)
    got = _run(kernel, kw)

    nb = int(kw["bins"].max()) + 1
    act = np.zeros(nb, np.int64)
    det = np.zeros(nb, np.int64)
    causes = np.zeros((nb, 4), np.int64)
    names = ["signal", "dark", "afterpulse", "persistence"]
    state = ApdState()
    rng = _Replay(kw["u"])
    for p in range(kw["u"].shape[0]):
        for k, s in enumerate(kw["starts"]):
            g = p * kw["period"] + s
            if g + 1e-13 < state.dead_until:
                rng.random()  # the kernel also skips this uniform
                continue
            act[kw["bins"][k]] += 1
            out = sample_gate(apd, state, powers[k], g, width, rng)
            if out.detected:
                det[kw["bins"][k]] += 1
                causes[kw["bins"][k], names.index(out.cause)] += 1
    assert np.array_equal(got["activated"], act)
    assert np.array_equal(got["detected"], det)
    assert np.array_equal(got["causes"], causes)
    assert got["detected"].sum() > 0


def test_decay_accumulate_matches_loop():
    rng = np.random.default_rng(1)
    decay, gain = rng.uniform(0.5, 1, 50), rng.uniform(0, 1e-3, 50)
    x = kernel.decay_accumulate(decay, gain, 0.3)
    ref = [0.3]
    for a, g in zip(decay, gain):
        ref.append(a * ref[-1] + g)
    assert np.allclose(x, ref, rtol=0, atol=0)


def test_pure_python_fallback_selected_by_env():
    env = dict(os.environ, NUOTDR_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import nuotdr; print(nuotdr.BACKEND)"], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "python"


def test_fallback_acquisition_identical_to_default(tmp_path):
    code = (
        "import sys, nuotdr\n"
        "from nuotdr import *\n"
        "link = FiberLink.uniform(5, 0.2)\n"
        "laser = LaserConfig(1e-3, 1e-7, 1e4)\n"
        "tr = run_acquisition(link, laser, ApdModel(dead_time_s=1e-6), TrainOfGates(2e6, 1e-7), 0.05, 10.0, seed=4)\n"
        "write_trace_csv(tr, sys.argv[1])\n"
    )
    paths = []
    for flag in ("", "1"):
        env = dict(os.environ)
        env.pop("NUOTDR_PURE_PYTHON", None)
        if flag:
            env["NUOTDR_PURE_PYTHON"] = flag
        path = tmp_path / f"t{flag or 'c'}.csv"
        subprocess.run([sys.executable, "-c", code, str(path)], env=env, check=True)
        paths.append(path.read_bytes())
    assert paths[0] == paths[1]
