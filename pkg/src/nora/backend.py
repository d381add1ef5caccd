"""Kernel backend selection.

Hot loops (circular convolution, line gather/scatter, 3D median) exist twice:
a numba ``@njit`` lane and a pure-numpy lane.  Both accumulate in the same
order, so their outputs are bit-identical; the numba lane is simply faster
once compiled.

Selection is controlled by the ``NORA_BACKEND`` environment variable read at
import time: ``numba``, ``numpy``, or ``auto`` (default; numba when it
imports cleanly).  ``set_backend`` switches at runtime, which the benchmark
uses to compare lanes in one process.
"""

import os

from . import _kernels_numpy
from .errors import ConfigError

_VALID = ("numba", "numpy")

_active_name = None
_active_module = None


def _load_numba_kernels():
    from . import _kernels_numba

    return _kernels_numba


def _resolve(name):
    if name == "numpy":
        return "numpy", _kernels_numpy
    if name == "numba":
        return "numba", _load_numba_kernels()
    # auto: prefer numba, fall back silently if it is unavailable
    try:
        return "numba", _load_numba_kernels()
    except ImportError:
        return "numpy", _kernels_numpy


def set_backend(name):
    """Select the kernel lane: 'numba', 'numpy', or 'auto'."""
    global _active_name, _active_module
    if name not in _VALID + ("auto",):
        raise ConfigError(f"unknown backend {name!r}; expected one of {_VALID + ('auto',)}")
    _active_name, _active_module = _resolve(name)


def backend_name():
    """Name of the currently active lane."""
    _ensure()
    return _active_name


def get_kernels():
    """Module providing conv2_circ / corr2_circ / gather_lines / scatter_lines / median3d."""
    _ensure()
    return _active_module


def _ensure():
    if _active_module is None:
        env = os.environ.get("NORA_BACKEND", "auto").strip().lower() or "auto"
        set_backend(env)
