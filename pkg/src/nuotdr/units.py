"""Physical constants and the handful of dB/W conversions used everywhere.

Power is carried in linear watts internally; dB forms exist only at the
edges (config input, trace output).
"""
from __future__ import annotations

import numpy as np

PLANCK = 6.62607015e-34  # J s, exact (SI 2019)
SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact

DEFAULT_WAVELENGTH_M = 1550e-9
DEFAULT_GROUP_SPEED_KM_S = 2.0e5
REFERENCE_GATE_S = 10e-9  # afterpulse probabilities are quoted per 10 ns gate


def photon_energy(wavelength_m: float = DEFAULT_WAVELENGTH_M) -> float:
    """Energy of one photon in joules."""
    if wavelength_m <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength_m}")
    return PLANCK * SPEED_OF_LIGHT / wavelength_m


def dbm_to_w(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0) * 1e-3


def w_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float) / 1e-3)


def db_to_ratio(db):
    """Power ratio for a dB value (10 dB -> 10)."""
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def five_log(ratio):
    """OTDR trace scale: 5*log10 of a power ratio (round trip folded in)."""
    return 5.0 * np.log10(ratio)
