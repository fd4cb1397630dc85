import math

import numpy as np
import pytest

from nuotdr.engine import Trace, TraceBin
from nuotdr.metrics import count_peaks, fit_slope, measure_dead_zone


def _trace(z, db):
    bins = [TraceBin(zi / 1e5, zi, 10, 10, 1, 0.0, 1.0, db_value=v) for zi, v in zip(z, db)]
    return Trace(tuple(bins), 1.0, 1e-7)


def test_fit_slope_exact_line():
    z = np.linspace(0, 10, 101)
    slope, icpt = fit_slope(_trace(z, 3.0 - 0.2 * z))
    assert slope == pytest.approx(-0.2) and icpt == pytest.approx(3.0)
    with pytest.raises(ValueError):
        fit_slope(_trace(z, 3.0 - 0.2 * z), 20, 30)


def test_dead_zone_of_exponential_tail():
    z = np.linspace(0, 16, 1601)
    base = -0.2 * z
    excess = np.where(z >= 8, 10.0 * np.exp(-(z - 8) / 0.5), 0.0)
    tr = _trace(z, base + 10 * np.log10(1 + (10 ** (excess / 10) - 1)))
    dz = measure_dead_zone(tr, 8.0, threshold_db=0.5)
    want = 0.5 * math.log(10.0 / 0.5)
    assert dz.recovered
    assert dz.length_km == pytest.approx(want, abs=0.02)
    assert dz.fit_slope_db_per_km == pytest.approx(-0.2, abs=1e-3)


def test_dead_zone_clean_trace_is_zero():
    z = np.linspace(0, 12, 121)
    dz = measure_dead_zone(_trace(z, -0.2 * z), 4.0)
    assert dz.length_km == 0.0 and dz.recovered


def test_dead_zone_unrecovered_and_short_trace():
    z = np.linspace(0, 12, 121)
    db = np.where(z > 4, 5.0 + 0.3 * (z - 4), 0.0)
    dz = measure_dead_zone(_trace(z, db), 4.0, fit_start_km=4.5)
    assert not dz.recovered or dz.length_km > 0
    with pytest.raises(ValueError):
        measure_dead_zone(_trace(z, db), 10.0)


def test_count_peaks_handles_saturation_and_floor():
    z = np.linspace(0, 1, 101)
    db = np.full(101, -5.0)
    db[30] = np.inf
    db[60] = 3.0
    db[80] = -np.inf
    peaks = count_peaks(_trace(z, db), 1.0)
    assert np.allclose(peaks, [0.3, 0.6])
    assert count_peaks(_trace(z, np.full(101, np.nan))).size == 0
