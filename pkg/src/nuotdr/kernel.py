"""Backend selection for the gate-train kernel.

The compiled extension is used when importable; ``NUOTDR_PURE_PYTHON=1``
forces the fallback. Both backends give bit-identical results.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernel_py

if os.environ.get("NUOTDR_PURE_PYTHON"):
    _impl = _kernel_py
    BACKEND = "python"
else:
    try:
        from . import _kernel as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernel_py
        BACKEND = "python"

simulate_block = _impl.simulate_block


def decay_accumulate(decay: np.ndarray, gain: np.ndarray, x0: float = 0.0) -> np.ndarray:
    return np.asarray(_impl.decay_accumulate(np.ascontiguousarray(decay, dtype=float), np.ascontiguousarray(gain, dtype=float), float(x0)))
