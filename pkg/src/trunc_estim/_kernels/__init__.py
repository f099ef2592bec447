"""Hot loops for the PSGD solver.

``run_steps`` is taken from the compiled extension when it was built and
from the pure-Python reference otherwise.  Set ``TRUNC_ESTIM_BACKEND`` to
``python`` to force the fallback (``compiled`` makes a missing extension an
import error).
"""

import os

from . import _psgd_py
from ._psgd_py import (BUDGET_EXCEEDED, FAMILY_EXPONENTIAL, FAMILY_GAUSSIAN, NOT_PD, OK,
                       PROJECTION_FAILED, SET_BOX, SET_FULL, SET_HALFSPACE, SET_POLY,
                       STREAM_EXHAUSTED)

try:
    from . import _psgd_c
except ImportError:  # extension not built
    _psgd_c = None

BACKENDS = {"python": _psgd_py}
if _psgd_c is not None:
    BACKENDS["compiled"] = _psgd_c


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: env var, then best available)."""
    name = name or os.environ.get("TRUNC_ESTIM_BACKEND", "").strip().lower() or None
    if name is None:
        return _psgd_c if _psgd_c is not None else _psgd_py
    if name not in ("python", "compiled"):
        raise ValueError(f"unknown backend {name!r}; expected 'python' or 'compiled'")
    if name not in BACKENDS:
        raise ImportError("compiled PSGD kernel is not available; rebuild the package with Cython")
    return BACKENDS[name]


def backend_name(mod=None) -> str:
    mod = mod or get_backend()
    return "compiled" if mod is _psgd_c and _psgd_c is not None else "python"


__all__ = ["get_backend", "backend_name", "BACKENDS", "OK", "STREAM_EXHAUSTED",
           "BUDGET_EXCEEDED", "PROJECTION_FAILED", "NOT_PD", "FAMILY_GAUSSIAN",
           "FAMILY_EXPONENTIAL", "SET_FULL", "SET_HALFSPACE", "SET_BOX", "SET_POLY"]
