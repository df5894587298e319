"""Hot kernels: compiled Cython core with a numpy fallback.

Each compiled module is used when importable; set ``SCNO_PURE_PYTHON=1`` to
force the fallback.  ``LIF_BACKEND`` / ``GELU_BACKEND`` name the active
implementations.
"""

import importlib
import os

import numpy as np

from . import _fallback


def _load(name: str):
    if os.environ.get("SCNO_PURE_PYTHON", "") not in ("", "0"):
        return _fallback, "python"
    try:
        return importlib.import_module(f"{__name__}.{name}"), "cython"
    except ImportError:  # extension not built
        return _fallback, "python"


_lif, LIF_BACKEND = _load("_lif")
_gelu, GELU_BACKEND = _load("_gelu")
BACKEND = "cython" if "cython" in (LIF_BACKEND, GELU_BACKEND) else "python"


def lif_forward(current, beta, threshold, slope, steps, smooth=False, save=True):
    """Run the LIF recurrence; returns ``(rate, v_history | None, n_spikes)``."""
    current = np.ascontiguousarray(current)
    beta = np.ascontiguousarray(beta, dtype=current.dtype)
    return _lif.lif_forward(current, beta, float(threshold), float(slope),
                             int(steps), bool(smooth), bool(save))


def lif_backward(grad_rate, vhist, beta, threshold, slope, detach_reset=True):
    """BPTT through the recurrence; returns ``(grad_current, grad_beta)``."""
    grad_rate = np.ascontiguousarray(grad_rate, dtype=vhist.dtype)
    beta = np.ascontiguousarray(beta, dtype=vhist.dtype)
    return _lif.lif_backward(grad_rate, vhist, beta, float(threshold),
                              float(slope), bool(detach_reset))


def gelu_forward(x):
    x = np.ascontiguousarray(x)
    return _gelu.gelu_forward(x.reshape(-1)).reshape(x.shape)


def gelu_backward(x, g):
    x = np.ascontiguousarray(x)
    g = np.ascontiguousarray(g, dtype=x.dtype)
    return _gelu.gelu_backward(x.reshape(-1), g.reshape(-1)).reshape(x.shape)


__all__ = ["BACKEND", "LIF_BACKEND", "GELU_BACKEND", "lif_forward", "lif_backward", "gelu_forward", "gelu_backward"]
